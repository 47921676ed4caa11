//! Gibbs posterior over poses and the Metropolis sampler.
//!
//! The posterior is `p(H | x) ∝ exp(−E(H, x))`. Its normalizer is never
//! evaluated: sampling only needs energy differences.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::energynet::EnergyNet;
use crate::error::RenderError;
use crate::geometry::{exp_so3, Pose, Vec3};
use crate::observation::{assemble_channels, ChannelStack, ObservationSet};
use crate::render::{compute_window, render, TriangleMesh};

/// Scalar energy over poses; lower is better.
pub trait PoseEnergy: Sync {
    fn energy(&self, pose: &Pose) -> f64;
}

impl<F> PoseEnergy for F
where
    F: Fn(&Pose) -> f64 + Sync,
{
    fn energy(&self, pose: &Pose) -> f64 {
        self(pose)
    }
}

/// Learned energy for one observation and object: render, assemble, forward.
#[derive(Clone, Copy)]
pub struct GibbsPosterior<'a> {
    observation: &'a ObservationSet,
    mesh: &'a TriangleMesh,
    net: &'a EnergyNet,
}

impl<'a> GibbsPosterior<'a> {
    pub fn new(observation: &'a ObservationSet, mesh: &'a TriangleMesh, net: &'a EnergyNet) -> Self {
        Self {
            observation,
            mesh,
            net,
        }
    }

    pub fn observation(&self) -> &'a ObservationSet {
        self.observation
    }

    pub fn mesh(&self) -> &'a TriangleMesh {
        self.mesh
    }

    pub fn net(&self) -> &'a EnergyNet {
        self.net
    }

    /// Network input for `pose`.
    pub fn stack(&self, pose: &Pose) -> Result<ChannelStack, RenderError> {
        let k = self.observation.intrinsics();
        let diameter = self.mesh.diameter();
        let window = compute_window(pose, diameter, k)?;
        let rendered = render(self.mesh, pose, k, &window);
        Ok(assemble_channels(self.observation, &rendered, pose, diameter, &window)
            .expect("window rendering matches the assembled stack"))
    }
}

impl PoseEnergy for GibbsPosterior<'_> {
    /// `+∞` for poses whose center is not in front of the camera.
    fn energy(&self, pose: &Pose) -> f64 {
        match self.stack(pose) {
            Ok(stack) => self
                .net
                .forward(&stack)
                .expect("window sizes are always within the network contract"),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Isotropic proposal widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalConfig {
    /// Translation standard deviation (mm).
    pub sigma_t: f64,
    /// Euler-vector standard deviation (rad).
    pub sigma_r: f64,
}

impl ProposalConfig {
    pub fn new(sigma_t: f64, sigma_r: f64) -> Option<Self> {
        (sigma_t > 0.0 && sigma_r > 0.0).then_some(Self { sigma_t, sigma_r })
    }

    /// 5% of the object diameter and 0.1 rad.
    pub fn for_diameter(diameter: f64) -> Self {
        Self {
            sigma_t: 0.05 * diameter,
            sigma_r: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
}

impl ChainConfig {
    pub fn new(total_iterations: usize, burn_in: usize) -> Option<Self> {
        (burn_in < total_iterations).then_some(Self {
            total_iterations,
            burn_in,
        })
    }

    pub fn kept_samples(&self) -> usize {
        self.total_iterations - self.burn_in
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 130,
            burn_in: 30,
        }
    }
}

/// Symmetric random-walk proposal: `T' ~ N(T, σ_t² I)`, `R' = exp(e) R` with
/// `e ~ N(0, σ_r² I)`.
pub fn propose<R: Rng + ?Sized>(current: &Pose, cfg: &ProposalConfig, rng: &mut R) -> Pose {
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let dt = Vec3::new(normal(), normal(), normal()) * cfg.sigma_t;
    let e = Vec3::new(normal(), normal(), normal()) * cfg.sigma_r;
    Pose::new(exp_so3(&e) * current.rotation, current.translation + dt)
}

/// Metropolis acceptance `min(1, exp(E_cur − E_prop))`.
pub fn accept_probability(proposed: f64, current: f64) -> f64 {
    if proposed == f64::INFINITY || proposed.is_nan() {
        return 0.0;
    }
    if current == f64::INFINITY {
        return 1.0;
    }
    (current - proposed).exp().min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStep<S> {
    pub state: S,
    pub energy: f64,
    /// Whether the proposal made at this iteration was accepted.
    pub accepted: bool,
}

/// Every iteration of a Metropolis run; `samples()` skips the burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain<S> {
    pub steps: Vec<ChainStep<S>>,
    pub burn_in: usize,
}

impl<S> Chain<S> {
    pub fn samples(&self) -> &[ChainStep<S>] {
        &self.steps[self.burn_in.min(self.steps.len())..]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.accepted).count() as f64 / self.steps.len() as f64
    }
}

/// Generic Metropolis iteration over any state space with a symmetric
/// proposal. A rejected proposal repeats the current state.
pub fn metropolis<S, R, P, E>(
    init: S,
    init_energy: f64,
    cfg: &ChainConfig,
    rng: &mut R,
    mut propose: P,
    mut energy: E,
) -> Chain<S>
where
    S: Clone,
    R: Rng + ?Sized,
    P: FnMut(&S, &mut R) -> S,
    E: FnMut(&S) -> f64,
{
    let mut current = init;
    let mut current_energy = init_energy;
    let mut steps = Vec::with_capacity(cfg.total_iterations);
    for _ in 0..cfg.total_iterations {
        let candidate = propose(&current, rng);
        let candidate_energy = energy(&candidate);
        let a = accept_probability(candidate_energy, current_energy);
        let u: f64 = rng.gen();
        let accepted = u < a;
        if accepted {
            current = candidate;
            current_energy = candidate_energy;
        }
        steps.push(ChainStep {
            state: current.clone(),
            energy: current_energy,
            accepted,
        });
    }
    Chain {
        steps,
        burn_in: cfg.burn_in,
    }
}

/// Metropolis chain over poses started at `init`.
pub fn run_chain<E: PoseEnergy + ?Sized, R: Rng + ?Sized>(
    posterior: &E,
    init: Pose,
    proposal: &ProposalConfig,
    chain: &ChainConfig,
    rng: &mut R,
) -> Chain<Pose> {
    let init_energy = posterior.energy(&init);
    metropolis(
        init,
        init_energy,
        chain,
        rng,
        |h, rng| propose(h, proposal, rng),
        |h| posterior.energy(h),
    )
}

/// Diagnostics dump: `iter,accepted,energy,tx,ty,tz,r00..r22`.
pub fn write_chain_csv<W: Write>(chain: &Chain<Pose>, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "iter,accepted,energy,tx,ty,tz,r00,r01,r02,r10,r11,r12,r20,r21,r22"
    )?;
    for (i, step) in chain.steps.iter().enumerate() {
        let a = step.state.to_array();
        write!(out, "{},{},{}", i + 1, step.accepted as u8, step.energy)?;
        for v in a[9..].iter().chain(&a[..9]) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
