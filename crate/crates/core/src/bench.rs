//! Experiment configuration, reproducible Monte-Carlo orchestration and
//! result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amp::{
    run_amp_symmetric_with, run_bayes_amp_pr_with, sample_glm_with, sample_spiked, AmpRun, GlmSample, NoiseKind,
};
use crate::denoiser::{DenoiserSpec, PolyRow};
use crate::error::{Error, Result};
use crate::oamp::{orthogonalize, verify_alpha_bound, AlphaBoundReport};
use crate::par::{self, Exec};
use crate::phase_retrieval::{
    correlation, grad_descent_step_with, one_step_prox_linear_with, operator_norm, prox_linear_step_with,
    spectral_init, spectral_overlap_theory, taf_step_with, AlgoParams, SpectralTheory, DEFAULT_EPSILON,
};
use crate::prior::{Channel, JointPrior};
use crate::quadrature::{gauss_hermite, QuadratureRule, DEFAULT_ORDER};
use crate::rng::{self, Purpose};
use crate::state_evolution::{amp_se, gamma_recursion, glm_beta_recursion, LowerBoundSeq};

fn default_trials() -> usize {
    1
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_order() -> usize {
    DEFAULT_ORDER
}
fn default_sweep_trials() -> usize {
    50
}
fn default_sweep_t() -> usize {
    10
}
fn default_alpha() -> f64 {
    0.6
}
fn default_gamma() -> f64 {
    0.7
}
fn default_inner_iterations() -> usize {
    300
}
fn default_inner_tol() -> f64 {
    1e-6
}
fn default_fuzz_cases() -> usize {
    100
}
fn default_fuzz_t() -> usize {
    6
}
fn default_degree() -> usize {
    3
}
fn default_fuzz_order() -> usize {
    16
}
fn default_slack() -> f64 {
    1e-9
}
fn default_se_tol() -> f64 {
    0.03
}
fn default_fuzz_prior() -> JointPrior {
    JointPrior::RademacherWithOverlap { a: 0.5 }
}
fn default_signal() -> JointPrior {
    JointPrior::GaussianWithOverlap { a: 0.0 }
}
fn default_side() -> JointPrior {
    JointPrior::point_mass()
}

/// A phase-retrieval algorithm and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    BayesAmp,
    Gd {
        eta: f64,
    },
    OneStepProxLinear {
        xi: f64,
    },
    ProxLinear {
        #[serde(default)]
        l: Option<f64>,
        #[serde(default = "default_inner_iterations")]
        inner_iterations: usize,
        #[serde(default)]
        rho: Option<f64>,
        #[serde(default = "default_inner_tol")]
        inner_tol: f64,
    },
    Taf {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

impl Algorithm {
    /// Row label, e.g. `gd[eta=0.5]`.
    pub fn label(&self) -> String {
        match self {
            Algorithm::BayesAmp => "bayes_amp".into(),
            Algorithm::Gd { eta } => format!("gd[eta={eta}]"),
            Algorithm::OneStepProxLinear { xi } => format!("one_step_prox_linear[xi={xi}]"),
            Algorithm::ProxLinear { l: Some(l), .. } => format!("prox_linear[l={l}]"),
            Algorithm::ProxLinear { .. } => "prox_linear".into(),
            Algorithm::Taf { alpha, gamma } => format!("taf[alpha={alpha},gamma={gamma}]"),
        }
    }

    /// Family name without parameters.
    pub fn family(&self) -> &'static str {
        match self {
            Algorithm::BayesAmp => "bayes_amp",
            Algorithm::Gd { .. } => "gd",
            Algorithm::OneStepProxLinear { .. } => "one_step_prox_linear",
            Algorithm::ProxLinear { .. } => "prox_linear",
            Algorithm::Taf { .. } => "taf",
        }
    }

    /// Copy with the swept step replaced.
    pub fn with_step(&self, step: f64) -> Result<Algorithm> {
        Ok(match self {
            Algorithm::Gd { .. } => Algorithm::Gd { eta: step },
            Algorithm::OneStepProxLinear { .. } => Algorithm::OneStepProxLinear { xi: step },
            Algorithm::Taf { gamma, .. } => Algorithm::Taf { alpha: step, gamma: *gamma },
            Algorithm::ProxLinear { inner_iterations, rho, inner_tol, .. } => Algorithm::ProxLinear {
                l: Some(step),
                inner_iterations: *inner_iterations,
                rho: *rho,
                inner_tol: *inner_tol,
            },
            Algorithm::BayesAmp => return Err(Error::Config("bayes_amp has no step size to sweep".into())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrBenchConfig {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub t_max: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    /// Write per-row cumulative wall time into the CSV (breaks byte-level
    /// reproducibility).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSweepConfig {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_sweep_trials")]
    pub trials: usize,
    #[serde(default = "default_sweep_t")]
    pub t_max: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Algorithms whose step is swept; their own step value is ignored.
    pub algorithms: Vec<Algorithm>,
    /// Explicit grid; overrides `lo`, `hi`, `points`.
    #[serde(default)]
    pub steps: Option<Vec<f64>>,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
    /// Also run Bayes AMP on the same trials as a reference.
    #[serde(default)]
    pub include_bayes_amp: bool,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl StepSweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if let Some(steps) = &self.steps {
            if steps.is_empty() {
                return Err(Error::Config("empty step grid".into()));
            }
            return Ok(steps.clone());
        }
        let (lo, hi, points) = match (self.lo, self.hi, self.points) {
            (Some(lo), Some(hi), Some(p)) => (lo, hi, p),
            _ => return Err(Error::Config("step sweep needs `steps` or all of `lo`, `hi`, `points`".into())),
        };
        if !(lo > 0.0 && hi >= lo && points >= 1) {
            return Err(Error::Config(format!("bad log grid lo = {lo}, hi = {hi}, points = {points}")));
        }
        if points == 1 {
            return Ok(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        Ok((0..points).map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeCheckConfig {
    pub n: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub t_max: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub prior: JointPrior,
    #[serde(default)]
    pub noise_kind: NoiseKind,
    #[serde(default = "default_se_tol")]
    pub tol: f64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundConfig {
    pub t_max: usize,
    /// Law of `(Θ, U)` (rank-one) or `(Θ, V)` (GLM).
    #[serde(default = "default_signal")]
    pub prior: JointPrior,
    /// Present for the GLM bound, absent for the rank-one bound.
    #[serde(default)]
    pub channel: Option<Channel>,
    #[serde(default = "default_side")]
    pub side: JointPrior,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Replace the overlap of a Gaussian prior by the spectral theory value at `delta`.
    #[serde(default)]
    pub spectral_side_information: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub deltas: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Dimension for the empirical check; none skips it.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OampFuzzConfig {
    #[serde(default = "default_fuzz_cases")]
    pub cases: usize,
    #[serde(default = "default_fuzz_t")]
    pub t_max: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_fuzz_prior")]
    pub prior: JointPrior,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_fuzz_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentConfig {
    PrBench(PrBenchConfig),
    StepSweep(StepSweepConfig),
    SeCheck(SeCheckConfig),
    LowerBound(LowerBoundConfig),
    SpectralTheory(SpectralConfig),
    OampFuzz(OampFuzzConfig),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = |n: usize, d: usize| {
            if n < 2 || d < 2 {
                return Err(Error::Config(format!("n = {n}, d = {d} must be at least 2")));
            }
            Ok(())
        };
        let trials = |t: usize| if t == 0 { Err(Error::Config("trials must be at least 1".into())) } else { Ok(()) };
        match self {
            ExperimentConfig::PrBench(c) => {
                dims(c.n, c.d)?;
                trials(c.trials)?;
                if c.algorithms.is_empty() {
                    return Err(Error::Config("no algorithms listed".into()));
                }
            }
            ExperimentConfig::StepSweep(c) => {
                dims(c.n, c.d)?;
                trials(c.trials)?;
                c.grid()?;
                for a in &c.algorithms {
                    a.with_step(1.0)?;
                }
            }
            ExperimentConfig::SeCheck(c) => {
                dims(c.n, 2)?;
                trials(c.trials)?;
                if c.t_max == 0 {
                    return Err(Error::Config("se_check needs t_max >= 1".into()));
                }
                c.prior.validate()?;
            }
            ExperimentConfig::LowerBound(c) => {
                c.prior.validate()?;
                if c.channel.is_some() && c.delta.is_none() {
                    return Err(Error::Config("GLM lower bound needs delta".into()));
                }
            }
            ExperimentConfig::SpectralTheory(c) => {
                trials(c.trials)?;
                if c.deltas.is_empty() {
                    return Err(Error::Config("no deltas listed".into()));
                }
            }
            ExperimentConfig::OampFuzz(c) => {
                c.prior.validate()?;
                if c.t_max == 0 {
                    return Err(Error::Config("oamp_fuzz needs t_max >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// The `kind` tag.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::PrBench(_) => "pr_bench",
            ExperimentConfig::StepSweep(_) => "step_sweep",
            ExperimentConfig::SeCheck(_) => "se_check",
            ExperimentConfig::LowerBound(_) => "lower_bound",
            ExperimentConfig::SpectralTheory(_) => "spectral_theory",
            ExperimentConfig::OampFuzz(_) => "oamp_fuzz",
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::PrBench(c) => c.master_seed = seed,
            ExperimentConfig::StepSweep(c) => c.master_seed = seed,
            ExperimentConfig::SeCheck(c) => c.master_seed = seed,
            ExperimentConfig::SpectralTheory(c) => c.master_seed = seed,
            ExperimentConfig::OampFuzz(c) => c.master_seed = seed,
            ExperimentConfig::LowerBound(_) => {}
        }
    }

    pub fn set_quadrature_order(&mut self, order: usize) {
        match self {
            ExperimentConfig::PrBench(c) => c.quadrature_order = order,
            ExperimentConfig::StepSweep(c) => c.quadrature_order = order,
            ExperimentConfig::SeCheck(c) => c.quadrature_order = order,
            ExperimentConfig::LowerBound(c) => c.quadrature_order = order,
            ExperimentConfig::SpectralTheory(c) => c.quadrature_order = order,
            ExperimentConfig::OampFuzz(c) => c.quadrature_order = order,
        }
    }

    pub fn output(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::PrBench(c) => c.output.as_deref(),
            ExperimentConfig::StepSweep(c) => c.output.as_deref(),
            ExperimentConfig::SeCheck(c) => c.output.as_deref(),
            ExperimentConfig::LowerBound(c) => c.output.as_deref(),
            ExperimentConfig::SpectralTheory(c) => c.output.as_deref(),
            ExperimentConfig::OampFuzz(c) => c.output.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Diverged,
    Failed,
}

/// One algorithm at one iteration of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algo: String,
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    pub trial_index: usize,
    pub iter: usize,
    pub correlation: f64,
    pub mse: f64,
    pub wall_ms: Option<f64>,
    pub status: RowStatus,
}

/// Theory curve accompanying a phase-retrieval run, aligned with the
/// benchmark's iteration index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySidecar {
    pub delta: f64,
    pub epsilon: f64,
    pub a: f64,
    pub lambda_star: Option<f64>,
    /// `beta[k]` is the SNR behind the estimate at iteration `k`; `null`
    /// once the recursion reports exact recovery.
    pub beta: Vec<Option<f64>>,
    pub optimal_correlation: Vec<f64>,
}

/// Mean wall time per algorithm (reported, never asserted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub algo: String,
    pub trials: usize,
    pub mean_total_ms: f64,
    pub mean_ms_per_iteration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrBenchOutput {
    pub records: Vec<TrialRecord>,
    pub sidecar: TheorySidecar,
    pub timing: Vec<TimingRow>,
}

/// Theory sidecar for phase retrieval at aspect ratio `delta`.
pub fn pr_theory(delta: f64, epsilon: f64, t_max: usize, order: usize) -> Result<TheorySidecar> {
    let rule = gauss_hermite(order)?;
    let spec = spectral_overlap_theory(delta, epsilon, &rule)?;
    let seq = match glm_beta_recursion(
        &JointPrior::GaussianWithOverlap { a: spec.a.min(1.0 - 1e-12) },
        &Channel::SquaredNoiseless,
        &JointPrior::point_mass(),
        delta,
        t_max + 1,
        &rule,
    ) {
        Ok(seq) => seq,
        Err(Error::RecursionDegenerate { partial, .. }) => *partial,
        Err(e) => return Err(e),
    };
    let mut beta = Vec::with_capacity(t_max + 1);
    let mut optimal_correlation = Vec::with_capacity(t_max + 1);
    for k in 0..=t_max {
        let s = k + 1;
        beta.push(seq.beta.get(s).copied());
        optimal_correlation.push(seq.optimal_correlation.get(s).copied().unwrap_or(1.0));
    }
    Ok(TheorySidecar {
        delta,
        epsilon,
        a: spec.a,
        lambda_star: spec.lambda_star.is_finite().then_some(spec.lambda_star),
        beta,
        optimal_correlation,
    })
}

struct AlgoTrace {
    rows: Vec<(f64, f64, f64, RowStatus)>,
}

fn divergent(theta: &[f64]) -> bool {
    let norm = par::dot(theta, theta).sqrt();
    !norm.is_finite() || norm > crate::amp::DIVERGENCE_FACTOR * (theta.len() as f64).sqrt()
}

fn mse(est: &[f64], theta: &[f64]) -> f64 {
    est.iter().zip(theta).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / theta.len() as f64
}

fn run_algorithm(
    exec: Exec,
    algo: &Algorithm,
    sample: &GlmSample,
    theta0: &[f64],
    a_hat: f64,
    t_max: usize,
    op_norm: &mut Option<f64>,
) -> AlgoTrace {
    let start = Instant::now();
    let elapsed = |s: &Instant| s.elapsed().as_secs_f64() * 1e3;
    let mut rows = Vec::with_capacity(t_max + 1);
    let fail_rest = |rows: &mut Vec<(f64, f64, f64, RowStatus)>, status: RowStatus, ms: f64| {
        while rows.len() <= t_max {
            rows.push((0.0, f64::NAN, ms, status));
        }
    };
    if let Algorithm::BayesAmp = algo {
        match run_bayes_amp_pr_with(exec, sample, theta0, a_hat, t_max) {
            Ok(run) => {
                let ms = elapsed(&start);
                for est in run.theta_hat.iter().take(t_max + 1) {
                    rows.push((correlation(est, &sample.theta), mse(est, &sample.theta), ms, RowStatus::Ok));
                }
                fail_rest(&mut rows, RowStatus::Failed, ms);
            }
            Err(Error::Divergence { .. }) => fail_rest(&mut rows, RowStatus::Diverged, elapsed(&start)),
            Err(_) => fail_rest(&mut rows, RowStatus::Failed, elapsed(&start)),
        }
        return AlgoTrace { rows };
    }
    let (x, xt, y) = (&sample.x, &sample.xt, &sample.y);
    let mut theta = theta0.to_vec();
    rows.push((correlation(&theta, &sample.theta), mse(&theta, &sample.theta), elapsed(&start), RowStatus::Ok));
    let l_default = |op_norm: &mut Option<f64>| -> Result<f64> {
        if op_norm.is_none() {
            *op_norm = Some(operator_norm(x, 1e-10)?);
        }
        Ok(2.0 * op_norm.unwrap().powi(2))
    };
    for _ in 1..=t_max {
        let next = match algo {
            Algorithm::Gd { eta } => Ok(grad_descent_step_with(exec, x, xt, y, &theta, *eta, sample.delta)),
            Algorithm::OneStepProxLinear { xi } => Ok(one_step_prox_linear_with(exec, x, xt, y, &theta, *xi)),
            Algorithm::Taf { alpha, gamma } => Ok(taf_step_with(exec, x, xt, y, &theta, *alpha, *gamma)),
            Algorithm::ProxLinear { l, inner_iterations, rho, inner_tol } => {
                let params = AlgoParams {
                    inner_iterations: *inner_iterations,
                    rho: *rho,
                    inner_tol: *inner_tol,
                    ..AlgoParams::default()
                };
                match l.map(Ok).unwrap_or_else(|| l_default(op_norm)) {
                    Ok(lv) => prox_linear_step_with(exec, x, xt, y, &theta, lv, &params).map(|(t, _)| t),
                    Err(e) => Err(e),
                }
            }
            Algorithm::BayesAmp => unreachable!(),
        };
        match next {
            Ok(t) if !divergent(&t) => {
                theta = t;
                rows.push((correlation(&theta, &sample.theta), mse(&theta, &sample.theta), elapsed(&start), RowStatus::Ok));
            }
            Ok(_) => {
                fail_rest(&mut rows, RowStatus::Diverged, elapsed(&start));
                break;
            }
            Err(_) => {
                fail_rest(&mut rows, RowStatus::Failed, elapsed(&start));
                break;
            }
        }
    }
    AlgoTrace { rows }
}

struct PrJob<'a> {
    n: usize,
    d: usize,
    trials: usize,
    t_max: usize,
    master_seed: u64,
    epsilon: f64,
    algorithms: &'a [Algorithm],
    record_wall_time: bool,
    a_hat: f64,
}

fn pr_trials(exec: Exec, job: &PrJob) -> Result<(Vec<TrialRecord>, Vec<TimingRow>)> {
    let delta = job.n as f64 / job.d as f64;
    let inner = if exec.effective() == Exec::Parallel && job.trials > 1 { Exec::Sequential } else { exec };
    let per_trial: Vec<Result<Vec<(usize, AlgoTrace)>>> = par::map_indexed(exec, job.trials, |trial| {
        let mut rng = rng::stream(job.master_seed, Purpose::Data, trial as u64);
        let seed = rng.random::<u64>();
        let sample = sample_glm_with(
            &JointPrior::GaussianWithOverlap { a: 0.0 },
            &JointPrior::point_mass(),
            &Channel::SquaredNoiseless,
            job.n,
            job.d,
            seed,
            &mut rng,
        )?;
        let init = spectral_init(&sample, job.epsilon);
        let mut op_norm = None;
        Ok(job
            .algorithms
            .iter()
            .enumerate()
            .map(|(k, algo)| {
                let trace = match &init {
                    Ok((theta0, _)) => run_algorithm(inner, algo, &sample, theta0, job.a_hat, job.t_max, &mut op_norm),
                    Err(_) => AlgoTrace { rows: vec![(0.0, f64::NAN, 0.0, RowStatus::Failed); job.t_max + 1] },
                };
                (k, trace)
            })
            .collect())
    });
    let mut records = Vec::with_capacity(job.trials * job.algorithms.len() * (job.t_max + 1));
    let mut totals = vec![0.0; job.algorithms.len()];
    for (trial, res) in per_trial.into_iter().enumerate() {
        for (k, trace) in res? {
            let label = job.algorithms[k].label();
            totals[k] += trace.rows.last().map(|r| r.2).unwrap_or(0.0);
            for (iter, (corr, err, ms, status)) in trace.rows.into_iter().enumerate() {
                records.push(TrialRecord {
                    algo: label.clone(),
                    n: job.n,
                    d: job.d,
                    delta,
                    trial_index: trial,
                    iter,
                    correlation: corr,
                    mse: err,
                    wall_ms: job.record_wall_time.then_some(ms),
                    status,
                });
            }
        }
    }
    let timing = job
        .algorithms
        .iter()
        .zip(&totals)
        .map(|(a, total)| TimingRow {
            algo: a.label(),
            trials: job.trials,
            mean_total_ms: total / job.trials as f64,
            mean_ms_per_iteration: total / job.trials as f64 / job.t_max.max(1) as f64,
        })
        .collect();
    Ok((records, timing))
}

/// Runs a phase-retrieval benchmark. Every algorithm in a trial starts from
/// the same spectral estimate; trial `i` draws from its own stream of the
/// master seed.
pub fn run_pr_bench(config: &PrBenchConfig, exec: Exec) -> Result<PrBenchOutput> {
    let delta = config.n as f64 / config.d as f64;
    let sidecar = pr_theory(delta, config.epsilon, config.t_max, config.quadrature_order)?;
    let job = PrJob {
        n: config.n,
        d: config.d,
        trials: config.trials,
        t_max: config.t_max,
        master_seed: config.master_seed,
        epsilon: config.epsilon,
        algorithms: &config.algorithms,
        record_wall_time: config.record_wall_time,
        a_hat: sidecar.a,
    };
    let (records, timing) = pr_trials(exec, &job)?;
    Ok(PrBenchOutput { records, sidecar, timing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBest {
    pub family: String,
    pub best_step: f64,
    pub best_mean_correlation: f64,
    /// Mean correlation at `t_max` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<TrialRecord>,
    pub sidecar: TheorySidecar,
    pub best: Vec<SweepBest>,
    pub bayes_mean_correlation: Option<f64>,
}

/// Mean correlation at iteration `iter` over `ok` rows of one label.
pub fn mean_correlation(records: &[TrialRecord], label: &str, iter: usize) -> Option<f64> {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.algo == label && r.iter == iter)
        .map(|r| if r.status == RowStatus::Ok { r.correlation } else { 0.0 })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Runs every algorithm at every grid step on shared trials and reports the
/// best step per family by mean correlation at `t_max`.
pub fn step_sweep(config: &StepSweepConfig, exec: Exec) -> Result<SweepOutput> {
    let grid = config.grid()?;
    let mut algorithms = Vec::new();
    for a in &config.algorithms {
        for &s in &grid {
            algorithms.push(a.with_step(s)?);
        }
    }
    if config.include_bayes_amp {
        algorithms.push(Algorithm::BayesAmp);
    }
    let delta = config.n as f64 / config.d as f64;
    let sidecar = pr_theory(delta, config.epsilon, config.t_max, config.quadrature_order)?;
    let job = PrJob {
        n: config.n,
        d: config.d,
        trials: config.trials,
        t_max: config.t_max,
        master_seed: config.master_seed,
        epsilon: config.epsilon,
        algorithms: &algorithms,
        record_wall_time: config.record_wall_time,
        a_hat: sidecar.a,
    };
    let (records, _) = pr_trials(exec, &job)?;
    let mut best = Vec::new();
    for a in &config.algorithms {
        let mut curve = Vec::new();
        for &s in &grid {
            let label = a.with_step(s)?.label();
            curve.push((s, mean_correlation(&records, &label, config.t_max).unwrap_or(0.0)));
        }
        let (best_step, best_mean_correlation) =
            curve.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
        best.push(SweepBest { family: a.family().into(), best_step, best_mean_correlation, curve });
    }
    let bayes_mean_correlation =
        if config.include_bayes_amp { mean_correlation(&records, "bayes_amp", config.t_max) } else { None };
    Ok(SweepOutput { records, sidecar, best, bayes_mean_correlation })
}

/// Per-iteration comparison of Bayes AMP on the spiked model with its state
/// evolution, averaged over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeCheckRow {
    pub iter: usize,
    pub mean_overlap: f64,
    pub se_overlap: f64,
    pub mean_mse: f64,
    pub se_mmse: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeCheckOutput {
    pub rows: Vec<SeCheckRow>,
    pub gamma: LowerBoundSeq,
    pub all_pass: bool,
}

pub fn se_check(config: &SeCheckConfig, exec: Exec) -> Result<(Vec<TrialRecord>, SeCheckOutput)> {
    let rule = gauss_hermite(config.quadrature_order)?;
    let spec = DenoiserSpec::BayesPosteriorMean { prior: config.prior.clone() };
    let t = config.t_max;
    let se = amp_se(&config.prior, &spec, t + 1, &rule)?;
    let lb = gamma_recursion(&config.prior, t + 1, &rule)?;
    let second = config.prior.second_moment();
    let inner = if exec.effective() == Exec::Parallel && config.trials > 1 { Exec::Sequential } else { exec };
    let runs: Vec<Result<(AmpRun, Vec<f64>)>> = par::map_indexed(exec, config.trials, |trial| {
        let seed = rng::stream(config.master_seed, Purpose::Spiked, trial as u64).random::<u64>();
        let sample = sample_spiked(&config.prior, config.n, config.noise_kind, seed)?;
        let run = run_amp_symmetric_with(inner, &sample, &spec, &se, &se.onsager, t)?;
        Ok((run, sample.theta))
    });
    let mut records = Vec::new();
    let mut overlap_sum = vec![0.0; t];
    let mut mse_sum = vec![0.0; t];
    for (trial, r) in runs.into_iter().enumerate() {
        let (run, theta) = r?;
        for k in 0..t {
            overlap_sum[k] += run.overlaps[k];
            let est = &run.theta_hat[k];
            let err = mse(est, &theta);
            mse_sum[k] += err;
            records.push(TrialRecord {
                algo: "bayes_amp_symmetric".into(),
                n: config.n,
                d: config.n,
                delta: 1.0,
                trial_index: trial,
                iter: k + 1,
                correlation: correlation(est, &theta),
                mse: err,
                wall_ms: None,
                status: RowStatus::Ok,
            });
        }
    }
    let trials = config.trials as f64;
    let rows: Vec<SeCheckRow> = (0..t)
        .map(|k| {
            let mean_overlap = overlap_sum[k] / trials;
            let se_overlap = se.mu[k] * second;
            let mean_mse = mse_sum[k] / trials;
            let se_mmse = lb.mmse_curve[k + 1];
            let pass = (mean_overlap - se_overlap).abs() <= config.tol && (mean_mse - se_mmse).abs() <= config.tol;
            SeCheckRow { iter: k + 1, mean_overlap, se_overlap, mean_mse, se_mmse, pass }
        })
        .collect();
    let all_pass = rows.iter().all(|r| r.pass);
    Ok((records, SeCheckOutput { rows, gamma: lb, all_pass }))
}

pub fn lower_bound(config: &LowerBoundConfig) -> Result<LowerBoundSeq> {
    let rule = gauss_hermite(config.quadrature_order)?;
    match &config.channel {
        None => gamma_recursion(&config.prior, config.t_max, &rule),
        Some(channel) => {
            let delta = config.delta.ok_or_else(|| Error::Config("GLM lower bound needs delta".into()))?;
            let prior = if config.spectral_side_information {
                let a = spectral_overlap_theory(delta, config.epsilon, &rule)?.a;
                JointPrior::GaussianWithOverlap { a: a.min(1.0 - 1e-12) }
            } else {
                config.prior.clone()
            };
            match glm_beta_recursion(&prior, channel, &config.side, delta, config.t_max, &rule) {
                Ok(seq) => Ok(seq),
                Err(Error::RecursionDegenerate { partial, .. }) => Ok(*partial),
                Err(e) => Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRow {
    pub theory: SpectralTheory,
    /// Mean correlation of the spectral estimate over trials, if run.
    pub empirical_mean: Option<f64>,
}

pub fn spectral_sweep(config: &SpectralConfig, exec: Exec) -> Result<Vec<SpectralRow>> {
    let rule = gauss_hermite(config.quadrature_order)?;
    let mut out = Vec::new();
    for &delta in &config.deltas {
        let theory = spectral_overlap_theory(delta, config.epsilon, &rule)?;
        let empirical_mean = match config.d {
            None => None,
            Some(d) => {
                let n = (delta * d as f64).round() as usize;
                let vals = spectral_trials(exec, n, d, config.trials, config.master_seed, config.epsilon)?;
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        out.push(SpectralRow { theory, empirical_mean });
    }
    Ok(out)
}

/// Spectral-estimate correlations for `trials` independent samples.
pub fn spectral_trials(exec: Exec, n: usize, d: usize, trials: usize, master_seed: u64, epsilon: f64) -> Result<Vec<f64>> {
    par::map_indexed(exec, trials, |trial| {
        let mut rng = rng::stream(master_seed, Purpose::Init, trial as u64);
        let seed = rng.random::<u64>();
        let sample = sample_glm_with(
            &JointPrior::GaussianWithOverlap { a: 0.0 },
            &JointPrior::point_mass(),
            &Channel::SquaredNoiseless,
            n,
            d,
            seed,
            &mut rng,
        )?;
        spectral_init(&sample, epsilon).map(|(_, c)| c)
    })
    .into_iter()
    .collect()
}

/// Random additively separable polynomial denoisers in `(x_t, u)` with
/// coefficients uniform on `[−1, 1]`, each row rescaled so that its state
/// evolution second moment is one (raw cubic compositions overflow within a
/// few iterations).
pub fn random_polynomial_spec<R: Rng + ?Sized>(
    rng: &mut R,
    prior: &JointPrior,
    t_max: usize,
    degree: usize,
    rule: &QuadratureRule,
) -> Result<DenoiserSpec> {
    let mut coef = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect() };
    let mut rows: Vec<PolyRow> = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let constant = coef(1)[0];
        let side = vec![coef(degree)];
        let x = if t == 0 {
            Vec::new()
        } else {
            let mut x = vec![Vec::new(); t];
            x[t - 1] = coef(degree);
            x
        };
        rows.push(PolyRow { constant, side, x });
        let se = amp_se(prior, &DenoiserSpec::Polynomial { rows: rows.clone() }, t + 1, rule)?;
        let second = se.sigma[(t, t)];
        if second > 0.0 && second.is_finite() {
            let s = second.sqrt().recip();
            let row = rows.last_mut().unwrap();
            row.constant *= s;
            row.side.iter_mut().flatten().for_each(|c| *c *= s);
            row.x.iter_mut().flatten().for_each(|c| *c *= s);
        }
    }
    Ok(DenoiserSpec::Polynomial { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzCase {
    pub case: usize,
    pub report: Option<AlphaBoundReport>,
    pub error: Option<String>,
}

impl FuzzCase {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.all_pass)
    }
}

/// Checks the overlap bound on random polynomial specs.
pub fn oamp_fuzz(config: &OampFuzzConfig, exec: Exec) -> Result<Vec<FuzzCase>> {
    let rule = gauss_hermite(config.quadrature_order)?;
    let lb = gamma_recursion(&config.prior, config.t_max, &rule)?;
    Ok(par::map_indexed(exec, config.cases, |case| {
        let mut rng = rng::stream(config.master_seed, Purpose::Fuzz, case as u64);
        let res = random_polynomial_spec(&mut rng, &config.prior, config.t_max, config.degree, &rule)
            .and_then(|spec| amp_se(&config.prior, &spec, config.t_max, &rule))
            .and_then(|se| orthogonalize(&se, &config.prior))
            .and_then(|o| verify_alpha_bound(&o, &lb, config.slack));
        match res {
            Ok(report) => FuzzCase { case, report: Some(report), error: None },
            Err(e) => FuzzCase { case, report: None, error: Some(e.to_string()) },
        }
    }))
}

/// 17 significant digits, round-trip exact.
fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub const CSV_HEADER: [&str; 10] =
    ["algo", "n", "d", "delta", "trial_index", "iter", "correlation", "mse", "wall_ms", "status"];

/// Writes records with a header row, LF line endings and 17-digit floats.
pub fn emit_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let io_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(io_err)?;
    w.write_record(CSV_HEADER).map_err(io_err)?;
    for r in records {
        let status = match r.status {
            RowStatus::Ok => "ok",
            RowStatus::Diverged => "diverged",
            RowStatus::Failed => "failed",
        };
        w.write_record([
            r.algo.clone(),
            r.n.to_string(),
            r.d.to_string(),
            fmt_float(r.delta),
            r.trial_index.to_string(),
            r.iter.to_string(),
            fmt_float(r.correlation),
            fmt_float(r.mse),
            r.wall_ms.map(fmt_float).unwrap_or_default(),
            status.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let io_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), source: e };
    let mut r = csv::Reader::from_path(path).map_err(io_err)?;
    r.deserialize().collect::<std::result::Result<Vec<TrialRecord>, _>>().map_err(io_err)
}

/// Pretty JSON with a trailing newline.
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    let mut f = fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Plain-text timing table.
pub fn format_timing(rows: &[TimingRow]) -> String {
    let mut s = format!("{:<44} {:>7} {:>14} {:>14}\n", "algorithm", "trials", "mean ms", "ms / iter");
    for r in rows {
        s.push_str(&format!("{:<44} {:>7} {:>14.3} {:>14.3}\n", r.algo, r.trials, r.mean_total_ms, r.mean_ms_per_iteration));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let ok = r#"{"kind":"pr_bench","n":20,"d":8,"t_max":1,"algorithms":[{"name":"gd","eta":0.1}]}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
        let bad = r#"{"kind":"pr_bench","n":20,"d":8,"t_max":1,"algorithms":[],"bogus":1}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))));
        let bad_algo = r#"{"kind":"pr_bench","n":20,"d":8,"t_max":1,"algorithms":[{"name":"gd","eta":0.1,"zeta":2}]}"#;
        assert!(ExperimentConfig::from_json(bad_algo).is_err());
        let no_trials = r#"{"kind":"pr_bench","n":20,"d":8,"trials":0,"t_max":1,"algorithms":[{"name":"bayes_amp"}]}"#;
        assert!(ExperimentConfig::from_json(no_trials).is_err());
    }

    #[test]
    fn log_grid() {
        let c = StepSweepConfig {
            n: 10,
            d: 4,
            trials: 1,
            t_max: 1,
            master_seed: 0,
            epsilon: 1e-3,
            algorithms: vec![Algorithm::Gd { eta: 0.0 }],
            steps: None,
            lo: Some(0.01),
            hi: Some(1.0),
            points: Some(3),
            include_bayes_amp: false,
            quadrature_order: 16,
            record_wall_time: false,
            output: None,
        };
        let g = c.grid().unwrap();
        assert_eq!(g.len(), 3);
        assert!((g[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn labels() {
        assert_eq!(Algorithm::Gd { eta: 0.5 }.label(), "gd[eta=0.5]");
        assert_eq!(Algorithm::BayesAmp.label(), "bayes_amp");
        assert!(Algorithm::BayesAmp.with_step(1.0).is_err());
    }
}
