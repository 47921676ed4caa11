//! Maximum-likelihood training of the energy network.
//!
//! Each step draws one labeled sample, initializes a Metropolis chain at the
//! current MAP estimate and descends
//! `∂E(H_gt)/∂θ − mean_k ∂E(H_k)/∂θ` over the chain samples.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::energynet::{EnergyNet, EnergyNetParams, ParamGradient};
use crate::error::{ContractError, SkipReason};
use crate::geometry::Pose;
use crate::harness::metrics::evaluate_pose;
use crate::infer::{estimate, InferConfig};
use crate::observation::{ChannelStack, ObservationSet};
use crate::posterior::{run_chain, ChainConfig, GibbsPosterior, ProposalConfig};
use crate::render::TriangleMesh;
use crate::seed::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma0: f64,
    pub lambda: f64,
    /// Constant multiplying the decaying schedule.
    pub rate_scale: f64,
    pub validate_every: usize,
    pub chain: ChainConfig,
    /// `None` uses the per-object default derived from the mesh diameter.
    pub proposal: Option<ProposalConfig>,
    pub infer: InferConfig,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma0: 10.0,
            lambda: 0.5,
            rate_scale: 1.0,
            validate_every: 5,
            chain: ChainConfig::default(),
            proposal: None,
            infer: InferConfig::default(),
            max_steps: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma0 > 0.0) {
            return Err("gamma0 must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return Err("lambda must be non-negative".into());
        }
        if !(self.rate_scale > 0.0) {
            return Err("rate scale must be positive".into());
        }
        if self.validate_every == 0 {
            return Err("validate_every must be at least 1".into());
        }
        if self.chain.burn_in >= self.chain.total_iterations {
            return Err("burn-in must be shorter than the chain".into());
        }
        self.infer.validate()
    }

    pub fn proposal_for(&self, mesh: &TriangleMesh) -> ProposalConfig {
        self.proposal
            .unwrap_or_else(|| ProposalConfig::for_diameter(mesh.diameter()))
    }
}

/// `γ_t = γ₀ / (1 + γ₀ λ t)`, times the configured scale.
pub fn learning_rate(t: usize, cfg: &TrainConfig) -> f64 {
    cfg.rate_scale * cfg.gamma0 / (1.0 + cfg.gamma0 * cfg.lambda * t as f64)
}

/// A labeled image.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub observation: ObservationSet,
    pub mesh: Arc<TriangleMesh>,
    pub gt_pose: Pose,
}

impl TrainingSample {
    pub fn new(
        observation: ObservationSet,
        mesh: Arc<TriangleMesh>,
        gt_pose: Pose,
    ) -> Result<Self, SkipReason> {
        if !(gt_pose.translation[2] > 0.0) {
            return Err(SkipReason::GroundTruthBehindCamera);
        }
        Ok(Self {
            observation,
            mesh,
            gt_pose,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub gradient: ParamGradient,
    pub data_energy: f64,
    /// Weighted mean energy of the model samples.
    pub sample_energy: f64,
    pub acceptance_rate: f64,
}

/// `∂E(data)/∂θ − Σ w_k ∂E(s_k)/∂θ / Σ w_k`. Zero-weight entries are skipped.
pub fn ml_gradient(
    net: &EnergyNet,
    data: &ChannelStack,
    samples: &[(ChannelStack, f64)],
) -> Result<(ParamGradient, f64, f64), ContractError> {
    let (data_energy, mut gradient) = net.backward(data)?;
    let total: f64 = samples.iter().map(|(_, w)| w).sum();
    let mut sample_energy = 0.0;
    if total > 0.0 {
        for (stack, w) in samples {
            if *w == 0.0 {
                continue;
            }
            let (e, g) = net.backward(stack)?;
            gradient.add_scaled(&g, -w / total);
            sample_energy += w / total * e;
        }
    }
    Ok((gradient, data_energy, sample_energy))
}

/// Gradient from a chain started at `init`. Consecutive repeats of a pose are
/// back-propagated once with their multiplicity as weight.
pub fn nll_gradient_from<R: Rng + ?Sized>(
    posterior: &GibbsPosterior<'_>,
    gt_pose: &Pose,
    init: Pose,
    proposal: &ProposalConfig,
    chain_cfg: &ChainConfig,
    rng: &mut R,
) -> Result<GradientEstimate, SkipReason> {
    let data = posterior
        .stack(gt_pose)
        .map_err(|_| SkipReason::GroundTruthBehindCamera)?;
    let chain = run_chain(posterior, init, proposal, chain_cfg, rng);

    let mut runs: Vec<(Pose, f64)> = Vec::new();
    for step in chain.samples() {
        match runs.last_mut() {
            Some((pose, count)) if *pose == step.state => *count += 1.0,
            _ => runs.push((step.state, 1.0)),
        }
    }
    let weighted: Vec<(ChannelStack, f64)> = runs
        .par_iter()
        .filter_map(|(pose, count)| posterior.stack(pose).ok().map(|s| (s, *count)))
        .collect();
    if weighted.is_empty() {
        return Err(SkipReason::NoRenderableSamples);
    }
    let (gradient, data_energy, sample_energy) =
        ml_gradient(posterior.net(), &data, &weighted).expect("windows satisfy the network contract");
    Ok(GradientEstimate {
        gradient,
        data_energy,
        sample_energy,
        acceptance_rate: chain.acceptance_rate(),
    })
}

/// Gradient of the negative log-likelihood of one sample, with the chain
/// initialized by MAP inference under the current parameters.
pub fn nll_gradient<R: Rng + ?Sized>(
    sample: &TrainingSample,
    net: &EnergyNet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<GradientEstimate, SkipReason> {
    let posterior = GibbsPosterior::new(&sample.observation, &sample.mesh, net);
    let init = estimate(&sample.observation, &sample.mesh, &posterior, &cfg.infer, rng)?;
    nll_gradient_from(
        &posterior,
        &sample.gt_pose,
        init.pose,
        &cfg.proposal_for(&sample.mesh),
        &cfg.chain,
        rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub correct: usize,
    pub total: usize,
}

impl ValidationScore {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Correct-pose count of MAP inference over `set`. Sample `i` draws from
/// sub-stream `i` of `seed`, so repeated calls are comparable.
pub fn validation_score(
    net: &EnergyNet,
    set: &[TrainingSample],
    cfg: &InferConfig,
    seed: u64,
) -> ValidationScore {
    let correct = set
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = substream(seed, "validate", i as u64);
            let posterior = GibbsPosterior::new(&s.observation, &s.mesh, net);
            estimate(&s.observation, &s.mesh, &posterior, cfg, &mut rng)
                .map(|h| evaluate_pose(&h.pose, &s.gt_pose, &s.mesh).correct)
                .unwrap_or(false)
        })
        .filter(|&c| c)
        .count();
    ValidationScore {
        correct,
        total: set.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Step {
        step: usize,
        sample: usize,
        learning_rate: f64,
        outcome: Result<StepStats, SkipReason>,
    },
    Validation {
        step: usize,
        score: ValidationScore,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub data_energy: f64,
    pub sample_energy: f64,
    pub acceptance_rate: f64,
    pub gradient_max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: EnergyNetParams,
    pub best_step: usize,
    pub best_score: ValidationScore,
    pub log: Vec<LogRecord>,
}

/// SGD with batch size one. Validation runs before the update at every
/// `validate_every`-th step (and once for `max_steps = 0`); the best
/// validated snapshot is kept, the earliest winning ties.
///
/// `on_validation` sees every validated snapshot, e.g. for checkpoints.
pub fn sgd_train<F>(
    initial: EnergyNetParams,
    train: &[TrainingSample],
    validation: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_validation: F,
) -> TrainOutcome
where
    F: FnMut(usize, &ValidationScore, &EnergyNetParams),
{
    assert!(!train.is_empty() && !validation.is_empty(), "training needs samples");
    let mut net = EnergyNet::new(initial);
    let mut log = Vec::new();
    let mut best: Option<(EnergyNetParams, usize, ValidationScore)> = None;
    let mut order: Vec<usize> = Vec::new();
    let mut validate = |net: &EnergyNet, step: usize, log: &mut Vec<LogRecord>| {
        let score = validation_score(net, validation, &cfg.infer, cfg.seed);
        on_validation(step, &score, net.params());
        log.push(LogRecord::Validation { step, score });
        if best.as_ref().map_or(true, |(_, _, b)| score.correct > b.correct) {
            best = Some((net.params().clone(), step, score));
        }
    };

    if cfg.max_steps == 0 {
        validate(&net, 0, &mut log);
    }
    for step in 0..cfg.max_steps {
        if step % cfg.validate_every == 0 {
            validate(&net, step, &mut log);
        }
        let epoch_pos = step % train.len();
        if epoch_pos == 0 {
            let mut shuffle = substream(cfg.seed, "shuffle", (step / train.len()) as u64);
            order = (0..train.len()).collect();
            order.shuffle(&mut shuffle);
        }
        let sample = order[epoch_pos];
        let rate = learning_rate(step, cfg);
        let mut rng = substream(cfg.seed, "train", step as u64);
        let outcome = nll_gradient(&train[sample], &net, cfg, &mut rng).map(|g| {
            let mut params = net.params().clone();
            params.apply_gradient(&g.gradient, rate);
            net = EnergyNet::new(params);
            StepStats {
                data_energy: g.data_energy,
                sample_energy: g.sample_energy,
                acceptance_rate: g.acceptance_rate,
                gradient_max_abs: g.gradient.max_abs(),
            }
        });
        log.push(LogRecord::Step {
            step,
            sample,
            learning_rate: rate,
            outcome,
        });
    }

    let (best, best_step, best_score) = best.expect("at least one validation");
    TrainOutcome {
        best,
        best_step,
        best_score,
        log,
    }
}

/// Training log as CSV, one row per record.
pub fn write_log_csv<W: Write>(log: &[LogRecord], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "kind,step,sample,learning_rate,data_energy,sample_energy,acceptance,grad_max_abs,correct,total,percent,note"
    )?;
    for r in log {
        match r {
            LogRecord::Step {
                step,
                sample,
                learning_rate,
                outcome: Ok(s),
            } => writeln!(
                out,
                "step,{step},{sample},{learning_rate},{},{},{},{},,,,",
                s.data_energy, s.sample_energy, s.acceptance_rate, s.gradient_max_abs
            )?,
            LogRecord::Step {
                step,
                sample,
                learning_rate,
                outcome: Err(reason),
            } => writeln!(out, "skip,{step},{sample},{learning_rate},,,,,,,,{reason}")?,
            LogRecord::Validation { step, score } => writeln!(
                out,
                "validation,{step},,,,,,,{},{},{},",
                score.correct,
                score.total,
                score.percent()
            )?,
        }
    }
    Ok(())
}
