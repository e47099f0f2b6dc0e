//! Dirichlet-process Gaussian mixture fitted by collapsed Gibbs sampling.
//!
//! Component parameters are integrated out under a conjugate
//! normal-inverse-Wishart base measure, so each Gibbs step reassigns one
//! point using Chinese-restaurant-process counts times the multivariate
//! Student-t posterior predictive of every occupied component, plus the
//! concentration mass times the prior predictive for a fresh component.
//! The reported partition is the post-burn-in sweep with the highest joint
//! posterior `p(z) p(X | z)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CognitionError, Result};
use crate::features::CumulantVector;

/// Weight below which a component is reported but not used downstream.
pub const DOMINANT_WEIGHT: f64 = 0.025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DPGMMConfig {
    /// CRP concentration (new-component propensity).
    pub concentration: f64,
    /// Base-measure mean.
    pub prior_mean: Vec<f64>,
    /// Mean-precision scaling `kappa_0`.
    pub prior_scale: f64,
    /// Inverse-Wishart degrees of freedom `nu_0 > dim - 1`.
    pub prior_dof: f64,
    /// Per-coordinate reference variance; the prior scatter matrix is
    /// `diag(prior_variance) * (nu_0 - dim - 1) / prior_precision_scale`
    /// (using `nu_0` itself when `nu_0 <= dim + 1`), so the expected
    /// component covariance is `prior_variance / prior_precision_scale`.
    pub prior_variance: Vec<f64>,
    pub prior_precision_scale: f64,
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl DPGMMConfig {
    /// Empirical-Bayes defaults: prior centred on the data mean, reference
    /// component covariance equal to the per-coordinate data variance.
    pub fn from_data(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).ok_or_else(|| CognitionError::invalid("no data"))?;
        let n = points.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let variance: Vec<f64> = (0..dim)
            .map(|j| {
                let v = points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n;
                v.max(1e-9 * (1.0 + mean[j] * mean[j]))
            })
            .collect();
        Ok(Self {
            concentration: 1.0,
            prior_mean: mean,
            prior_scale: 0.01,
            prior_dof: dim as f64 + 2.0,
            prior_variance: variance,
            prior_precision_scale: 1.0,
            n_sweeps: 500,
            burn_in: 200,
            seed: 0,
        })
    }

    pub fn from_cumulants(vectors: &[CumulantVector]) -> Result<Self> {
        Self::from_data(&to_points(vectors))
    }

    pub fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(CognitionError::invalid("prior mean must be non-empty"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CognitionError::invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("concentration", self.concentration)?;
        positive("prior_scale", self.prior_scale)?;
        positive("prior_precision_scale", self.prior_precision_scale)?;
        if !(self.prior_dof > d as f64 - 1.0) {
            return Err(CognitionError::invalid(format!("prior_dof must exceed dim - 1 = {}", d - 1)));
        }
        if self.prior_variance.len() != d || self.prior_variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(CognitionError::invalid("prior_variance must hold one positive entry per dimension"));
        }
        if self.prior_mean.iter().any(|m| !m.is_finite()) {
            return Err(CognitionError::invalid("prior_mean must be finite"));
        }
        if self.n_sweeps == 0 || self.burn_in >= self.n_sweeps {
            return Err(CognitionError::invalid("need burn_in < n_sweeps"));
        }
        Ok(())
    }

    fn prior(&self) -> NiwPrior {
        let d = self.dim();
        let slack = self.prior_dof - d as f64 - 1.0;
        let factor = if slack > 0.0 { slack } else { self.prior_dof } / self.prior_precision_scale;
        NiwPrior {
            mean: self.prior_mean.clone(),
            kappa: self.prior_scale,
            dof: self.prior_dof,
            scatter_diag: self.prior_variance.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Normal-inverse-Wishart hyperparameters with diagonal scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    pub mean: Vec<f64>,
    pub kappa: f64,
    pub dof: f64,
    pub scatter_diag: Vec<f64>,
}

impl NiwPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scatter(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.scatter_diag.clone()))
    }

    fn log_det_scatter(&self) -> f64 {
        self.scatter_diag.iter().map(|v| v.ln()).sum()
    }
}

fn ln_multi_gamma(dim: usize, a: f64) -> f64 {
    let d = dim as f64;
    d * (d - 1.0) / 4.0 * std::f64::consts::PI.ln() + (0..dim).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Sufficient statistics of one component plus its cached predictive.
#[derive(Debug, Clone)]
struct Cluster {
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    pred: Predictive,
}

/// Multivariate Student-t predictive.
#[derive(Debug, Clone)]
struct Predictive {
    loc: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    dof: f64,
    log_norm: f64,
}

impl Predictive {
    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.loc;
        let y = self.chol.l().solve_lower_triangular(&diff).expect("non-singular factor");
        let d = x.len() as f64;
        self.log_norm - 0.5 * (self.dof + d) * (1.0 + y.norm_squared() / self.dof).ln()
    }
}

struct Posterior {
    kappa: f64,
    dof: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

fn posterior(prior: &NiwPrior, count: usize, sum: &DVector<f64>, outer: &DMatrix<f64>) -> Posterior {
    let n = count as f64;
    let m0 = DVector::from_vec(prior.mean.clone());
    let kappa = prior.kappa + n;
    let dof = prior.dof + n;
    let mean = (&m0 * prior.kappa + sum) / kappa;
    let scatter = prior.scatter() + outer + &m0 * m0.transpose() * prior.kappa - &mean * mean.transpose() * kappa;
    // symmetrize against rounding
    let scatter = (&scatter + scatter.transpose()) * 0.5;
    Posterior { kappa, dof, mean, scatter }
}

fn robust_cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let mut m = m;
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for attempt in 0..8 {
        if let Some(c) = Cholesky::new(m.clone()) {
            return Ok(c);
        }
        let jitter = scale * 1e-12 * 10f64.powi(attempt);
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
    }
    Err(CognitionError::Numerical("scatter matrix is not positive definite".into()))
}

impl Cluster {
    fn empty(prior: &NiwPrior) -> Result<Self> {
        let d = prior.dim();
        let mut c = Cluster { count: 0, sum: DVector::zeros(d), outer: DMatrix::zeros(d, d), pred: placeholder(d) };
        c.refresh(prior)?;
        Ok(c)
    }

    fn refresh(&mut self, prior: &NiwPrior) -> Result<()> {
        let d = prior.dim() as f64;
        let post = posterior(prior, self.count, &self.sum, &self.outer);
        let dof = post.dof - d + 1.0;
        let shape = post.scatter * ((post.kappa + 1.0) / (post.kappa * dof));
        let chol = robust_cholesky(shape)?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = ln_gamma((dof + d) / 2.0)
            - ln_gamma(dof / 2.0)
            - 0.5 * d * (dof * std::f64::consts::PI).ln()
            - 0.5 * log_det;
        self.pred = Predictive { loc: post.mean, chol, dof, log_norm };
        Ok(())
    }

    fn add(&mut self, x: &DVector<f64>) {
        self.count += 1;
        self.sum += x;
        self.outer += x * x.transpose();
    }

    fn remove(&mut self, x: &DVector<f64>) {
        self.count -= 1;
        self.sum -= x;
        self.outer -= x * x.transpose();
    }

    fn log_marginal(&self, prior: &NiwPrior) -> Result<f64> {
        let d = prior.dim();
        let n = self.count as f64;
        let post = posterior(prior, self.count, &self.sum, &self.outer);
        let chol = robust_cholesky(post.scatter)?;
        let log_det_n: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * n * d as f64 * std::f64::consts::PI.ln() + ln_multi_gamma(d, post.dof / 2.0)
            - ln_multi_gamma(d, prior.dof / 2.0)
            + 0.5 * prior.dof * prior.log_det_scatter()
            - 0.5 * post.dof * log_det_n
            + 0.5 * d as f64 * (prior.kappa.ln() - post.kappa.ln()))
    }
}

fn placeholder(d: usize) -> Predictive {
    Predictive {
        loc: DVector::zeros(d),
        chol: Cholesky::new(DMatrix::identity(d, d)).expect("identity"),
        dof: 1.0,
        log_norm: 0.0,
    }
}

/// Mixture component reported by a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Posterior mean of the component mean.
    pub mean: Vec<f64>,
    /// Posterior mean of the component covariance, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub count: usize,
}

impl MixtureComponent {
    pub fn is_dominant(&self) -> bool {
        self.weight >= DOMINANT_WEIGHT
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j])
    }

    /// Lower Cholesky factor of the covariance, row-major.
    pub fn covariance_cholesky(&self) -> Result<Vec<Vec<f64>>> {
        let l = robust_cholesky(self.cov_matrix())?.l();
        Ok((0..l.nrows()).map(|i| (0..l.ncols()).map(|j| l[(i, j)]).collect()).collect())
    }

    /// Gaussian log density of `x` under this component.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let chol = robust_cholesky(self.cov_matrix())?;
        let diff = DVector::from_column_slice(x) - DVector::from_column_slice(&self.mean);
        let y = chol.l().solve_lower_triangular(&diff).expect("non-singular factor");
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = x.len() as f64;
        Ok(-0.5 * (d * std::f64::consts::TAU.ln() + log_det + y.norm_squared()))
    }
}

/// Per-sweep diagnostics of a Gibbs run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTrace {
    pub components: Vec<usize>,
    pub log_joint: Vec<f64>,
    /// Sum of empirical weights after each sweep.
    pub weight_sum: Vec<f64>,
    /// Whether every component's posterior scatter factored after each sweep.
    pub covariances_pd: Vec<bool>,
    /// Sweep index (0-based, counting every sweep of this run) of the mode.
    pub mode_sweep: Option<usize>,
}

/// Snapshot of a fitted DP mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    components: Vec<MixtureComponent>,
    prior: NiwPrior,
    concentration: f64,
    total_count: usize,
    data: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    log_joint: f64,
    trace: SweepTrace,
    config: Option<DPGMMConfig>,
}

impl MixtureModel {
    /// A model from explicit components (no training data attached).
    pub fn from_components(
        components: Vec<MixtureComponent>,
        prior: NiwPrior,
        concentration: f64,
        total_count: usize,
    ) -> Result<Self> {
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if components.is_empty() || (sum - 1.0).abs() > 1e-9 {
            return Err(CognitionError::invalid("component weights must sum to 1"));
        }
        for c in &components {
            if c.mean.len() != prior.dim() || c.covariance.len() != prior.dim() {
                return Err(CognitionError::invalid("component dimension differs from prior"));
            }
            c.covariance_cholesky()?;
        }
        Ok(Self {
            components,
            prior,
            concentration,
            total_count,
            data: Vec::new(),
            assignments: Vec::new(),
            log_joint: f64::NAN,
            trace: SweepTrace::default(),
            config: None,
        })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn dominant(&self) -> impl Iterator<Item = (usize, &MixtureComponent)> {
        self.components.iter().enumerate().filter(|(_, c)| c.is_dominant())
    }

    pub fn dominant_count(&self) -> usize {
        self.dominant().count()
    }

    pub fn prior(&self) -> &NiwPrior {
        &self.prior
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn total_count(&self) -> usize {
        self.total_count
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Component index of each training point.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn log_joint(&self) -> f64 {
        self.log_joint
    }

    pub fn trace(&self) -> &SweepTrace {
        &self.trace
    }

    pub fn config(&self) -> Option<&DPGMMConfig> {
        self.config.as_ref()
    }

    /// Log of the CRP-weighted prior predictive for a fresh component.
    pub fn log_new_component_density(&self, x: &[f64]) -> Result<f64> {
        let cluster = Cluster::empty(&self.prior)?;
        let n = self.total_count as f64;
        Ok((self.concentration / (n + self.concentration)).ln() + cluster.pred.log_density(&DVector::from_column_slice(x)))
    }

    /// Log of `weight * N/(N+alpha) * N(x; mean, cov)` for component `c`.
    pub fn log_component_density(&self, c: usize, x: &[f64]) -> Result<f64> {
        let comp = &self.components[c];
        let n = self.total_count as f64;
        Ok((comp.weight * n / (n + self.concentration)).ln() + comp.log_density(x)?)
    }
}

/// On-disk form: covariances are stored as lower Cholesky factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    concentration: f64,
    total_count: usize,
    prior: NiwPrior,
    config: Option<DPGMMConfig>,
    log_joint: Option<f64>,
    components: Vec<StoredComponent>,
    data: Vec<Vec<f64>>,
    assignments: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredComponent {
    weight: f64,
    count: usize,
    mean: Vec<f64>,
    covariance_cholesky: Vec<Vec<f64>>,
}

const MODEL_FORMAT: &str = "cogniscope-dp-mixture 1";

impl MixtureModel {
    pub fn to_json(&self) -> Result<String> {
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(StoredComponent {
                    weight: c.weight,
                    count: c.count,
                    mean: c.mean.clone(),
                    covariance_cholesky: c.covariance_cholesky()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            concentration: self.concentration,
            total_count: self.total_count,
            prior: self.prior.clone(),
            config: self.config.clone(),
            log_joint: self.log_joint.is_finite().then_some(self.log_joint),
            components,
            data: self.data.clone(),
            assignments: self.assignments.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| CognitionError::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| CognitionError::invalid(format!("model file: {e}")))?;
        if doc.format != MODEL_FORMAT {
            return Err(CognitionError::invalid(format!("unsupported model format {:?}", doc.format)));
        }
        let components = doc
            .components
            .into_iter()
            .map(|c| {
                let d = c.mean.len();
                if c.covariance_cholesky.len() != d || c.covariance_cholesky.iter().any(|r| r.len() != d) {
                    return Err(CognitionError::invalid("cholesky factor has the wrong shape"));
                }
                let l = DMatrix::from_fn(d, d, |i, j| if j <= i { c.covariance_cholesky[i][j] } else { 0.0 });
                let cov = &l * l.transpose();
                Ok(MixtureComponent {
                    weight: c.weight,
                    mean: c.mean,
                    covariance: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
                    count: c.count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::from_components(components, doc.prior, doc.concentration, doc.total_count)?;
        if doc.data.len() != doc.assignments.len() || doc.assignments.iter().any(|&a| a >= model.components.len()) {
            return Err(CognitionError::invalid("training state is inconsistent"));
        }
        model.data = doc.data;
        model.assignments = doc.assignments;
        model.log_joint = doc.log_joint.unwrap_or(f64::NAN);
        model.config = doc.config;
        Ok(model)
    }
}

pub(crate) fn to_points(vectors: &[CumulantVector]) -> Vec<Vec<f64>> {
    vectors.iter().map(|v| v.values().to_vec()).collect()
}

pub fn dpgmm_fit(vectors: &[CumulantVector], config: &DPGMMConfig) -> Result<MixtureModel> {
    dpgmm_fit_points(&to_points(vectors), config)
}

/// Collapsed Gibbs sampler state.
struct Sampler {
    prior: NiwPrior,
    alpha: f64,
    points: Vec<DVector<f64>>,
    assignments: Vec<usize>,
    clusters: Vec<Cluster>,
    fresh: Cluster,
}

impl Sampler {
    fn new(prior: NiwPrior, alpha: f64) -> Result<Self> {
        let fresh = Cluster::empty(&prior)?;
        Ok(Self { prior, alpha, points: Vec::new(), assignments: Vec::new(), clusters: Vec::new(), fresh })
    }

    fn from_partition(prior: NiwPrior, alpha: f64, data: &[Vec<f64>], assignments: &[usize]) -> Result<Self> {
        let mut s = Self::new(prior, alpha)?;
        let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
        for _ in 0..k {
            s.clusters.push(Cluster::empty(&s.prior)?);
        }
        for (x, &a) in data.iter().zip(assignments) {
            let v = DVector::from_column_slice(x);
            s.clusters[a].add(&v);
            s.points.push(v);
            s.assignments.push(a);
        }
        // drop components emptied by construction
        let mut c = 0;
        while c < s.clusters.len() {
            if s.clusters[c].count == 0 {
                s.drop_cluster(c);
            } else {
                c += 1;
            }
        }
        for cl in &mut s.clusters {
            cl.refresh(&s.prior)?;
        }
        Ok(s)
    }

    fn drop_cluster(&mut self, c: usize) {
        let last = self.clusters.len() - 1;
        self.clusters.swap_remove(c);
        if c != last {
            for a in self.assignments.iter_mut() {
                if *a == last {
                    *a = c;
                }
            }
        }
    }

    /// Samples a component for point `x` (not currently counted anywhere).
    fn choose<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R, scratch: &mut Vec<f64>) -> usize {
        scratch.clear();
        for c in &self.clusters {
            scratch.push((c.count as f64).ln() + c.pred.log_density(x));
        }
        scratch.push(self.alpha.ln() + self.fresh.pred.log_density(x));
        let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scratch.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        let mut u = rng.random::<f64>() * total;
        for (k, s) in scratch.iter().enumerate() {
            if u < *s {
                return k;
            }
            u -= s;
        }
        scratch.len() - 1
    }

    fn place(&mut self, i: usize, k: usize) -> Result<()> {
        if k == self.clusters.len() {
            self.clusters.push(Cluster::empty(&self.prior)?);
        }
        self.clusters[k].add(&self.points[i]);
        self.clusters[k].refresh(&self.prior)?;
        self.assignments[i] = k;
        Ok(())
    }

    /// Appends points, seating each by the sequential CRP conditional.
    fn seat_new<R: Rng + ?Sized>(&mut self, data: &[Vec<f64>], rng: &mut R) -> Result<()> {
        let mut scratch = Vec::new();
        for x in data {
            let v = DVector::from_column_slice(x);
            let k = self.choose(&v, rng, &mut scratch);
            self.points.push(v);
            self.assignments.push(usize::MAX);
            let i = self.points.len() - 1;
            self.place(i, k)?;
        }
        Ok(())
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.shuffle(rng);
        let mut scratch = Vec::new();
        for i in order {
            let old = self.assignments[i];
            self.clusters[old].remove(&self.points[i]);
            if self.clusters[old].count == 0 {
                self.drop_cluster(old);
            } else {
                self.clusters[old].refresh(&self.prior)?;
            }
            let x = self.points[i].clone();
            let k = self.choose(&x, rng, &mut scratch);
            self.place(i, k)?;
        }
        Ok(())
    }

    fn log_joint(&self) -> Result<f64> {
        let n = self.points.len() as f64;
        let mut lp = self.clusters.len() as f64 * self.alpha.ln() + ln_gamma(self.alpha) - ln_gamma(self.alpha + n);
        for c in &self.clusters {
            lp += ln_gamma(c.count as f64) + c.log_marginal(&self.prior)?;
        }
        Ok(lp)
    }

    fn scatter_pd(&self) -> bool {
        self.clusters.iter().all(|c| {
            let post = posterior(&self.prior, c.count, &c.sum, &c.outer);
            Cholesky::new(post.scatter).is_some()
        })
    }

    /// Components ordered by descending count, then ascending first coordinate.
    fn snapshot(&self, config: Option<DPGMMConfig>, log_joint: f64, trace: SweepTrace) -> MixtureModel {
        let d = self.prior.dim() as f64;
        let n = self.points.len() as f64;
        let mut order: Vec<usize> = (0..self.clusters.len()).collect();
        let means: Vec<DVector<f64>> = self
            .clusters
            .iter()
            .map(|c| posterior(&self.prior, c.count, &c.sum, &c.outer).mean)
            .collect();
        order.sort_by(|&a, &b| {
            self.clusters[b].count.cmp(&self.clusters[a].count).then(means[a][0].total_cmp(&means[b][0]))
        });
        let mut relabel = vec![0; self.clusters.len()];
        let components = order
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                relabel[old] = new;
                let c = &self.clusters[old];
                let post = posterior(&self.prior, c.count, &c.sum, &c.outer);
                let denom = if post.dof - d - 1.0 > 0.0 { post.dof - d - 1.0 } else { post.dof };
                let cov = post.scatter / denom;
                MixtureComponent {
                    weight: c.count as f64 / n,
                    mean: post.mean.iter().copied().collect(),
                    covariance: (0..cov.nrows()).map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect()).collect(),
                    count: c.count,
                }
            })
            .collect();
        MixtureModel {
            components,
            prior: self.prior.clone(),
            concentration: self.alpha,
            total_count: self.points.len(),
            data: self.points.iter().map(|p| p.iter().copied().collect()).collect(),
            assignments: self.assignments.iter().map(|&a| relabel[a]).collect(),
            log_joint,
            trace,
            config,
        }
    }
}

fn check_points(points: &[Vec<f64>], dim: usize) -> Result<()> {
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(CognitionError::invalid(format!("every vector must have {dim} finite coordinates")));
    }
    Ok(())
}

/// Runs sweeps, returning the post-burn-in maximum of the joint posterior.
/// `incumbent` is an already-known state competing for the mode.
fn run_chain(
    sampler: &mut Sampler,
    config: &DPGMMConfig,
    rng: &mut ChaCha8Rng,
    incumbent: Option<(f64, Vec<usize>)>,
) -> Result<(MixtureModel, SweepTrace)> {
    let mut trace = SweepTrace::default();
    let mut best: Option<(f64, Vec<usize>)> = incumbent;
    for sweep in 0..config.n_sweeps {
        sampler.sweep(rng)?;
        let lj = sampler.log_joint()?;
        let n = sampler.points.len() as f64;
        trace.components.push(sampler.clusters.len());
        trace.log_joint.push(lj);
        trace.weight_sum.push(sampler.clusters.iter().map(|c| c.count as f64 / n).sum());
        trace.covariances_pd.push(sampler.scatter_pd());
        if sweep >= config.burn_in && best.as_ref().is_none_or(|(b, _)| lj > *b) {
            best = Some((lj, sampler.assignments.clone()));
            trace.mode_sweep = Some(sweep);
        }
    }
    let (lj, assignments) = best.expect("n_sweeps > burn_in");
    let data: Vec<Vec<f64>> = sampler.points.iter().map(|p| p.iter().copied().collect()).collect();
    let mode = Sampler::from_partition(sampler.prior.clone(), sampler.alpha, &data, &assignments)?;
    let model = mode.snapshot(Some(config.clone()), lj, trace.clone());
    Ok((model, trace))
}

pub fn dpgmm_fit_points(points: &[Vec<f64>], config: &DPGMMConfig) -> Result<MixtureModel> {
    config.validate()?;
    if points.len() < 10 {
        return Err(CognitionError::invalid(format!("DPGMM needs >= 10 vectors, got {}", points.len())));
    }
    check_points(points, config.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::new(config.prior(), config.concentration)?;
    sampler.seat_new(points, &mut rng)?;
    Ok(run_chain(&mut sampler, config, &mut rng, None)?.0)
}

/// Resumes sampling from `model`'s mode partition with `new_vectors` appended.
///
/// The prior and concentration stay those of `model`; `config` supplies the
/// sweep schedule and seed. The current partition competes for the new mode,
/// and an empty append returns the model unchanged.
pub fn update_posterior_points(model: &MixtureModel, new_points: &[Vec<f64>], config: &DPGMMConfig) -> Result<MixtureModel> {
    config.validate()?;
    if model.data.is_empty() {
        return Err(CognitionError::invalid("model carries no training state to update"));
    }
    if new_points.is_empty() {
        return Ok(model.clone());
    }
    check_points(new_points, model.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = Sampler::from_partition(model.prior.clone(), model.concentration, &model.data, &model.assignments)?;
    sampler.seat_new(new_points, &mut rng)?;
    let incumbent = (sampler.log_joint()?, sampler.assignments.clone());
    let (mut updated, _) = run_chain(&mut sampler, config, &mut rng, Some(incumbent))?;
    updated.config = Some(config.clone());
    Ok(updated)
}

pub fn update_posterior(model: &MixtureModel, new_vectors: &[CumulantVector], config: &DPGMMConfig) -> Result<MixtureModel> {
    update_posterior_points(model, &to_points(new_vectors), config)
}
