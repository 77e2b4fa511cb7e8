//! The alternating two-game training loop.
//!
//! Each round runs `m` source-phase outer steps (each being `k` discriminator updates
//! followed by one shared-generator update) and then `n` target-phase steps (one
//! target-discriminator update followed by a joint generator/encoder update). The loop
//! stops when the oracle-distance metric stalls or when `max-rounds` is reached, and the
//! returned state carries the best-evaluated parameter snapshot.
//!
//! Update isolation is enforced structurally: a forward pass registers a network's
//! parameters on the tape only when that network is being trained in the current update;
//! all other networks contribute as constants, so no gradient can ever reach them.
//!
//! On finite worlds the generator's and encoder's categorical output distributions are not
//! sampled inside a loss: the inner expectation over the output domain is computed exactly
//! on a grid of one-hot vertices. The expected loss equals the sampled estimator in mean
//! and gradient, with strictly lower variance, and keeps discriminator inputs on the data
//! support. Continuous worlds use the literal sampled forms with input-concatenated noise.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::{
    gradient_penalty, source_disc_loss, source_disc_loss_expected, source_gen_loss,
    source_gen_loss_expected, target_disc_loss, target_disc_loss_expected, target_gen_loss,
    target_gen_loss_expected, vertex_inputs, wasserstein_gen_loss, wasserstein_losses, LossKind,
    LossVariant, NetId, NetworkBundle,
};
use crate::metrics::{
    encoder_rmse, encoder_rmse_gap, encoder_tv, encoder_tv_gap, MetricRecord, MetricsError,
};
use crate::optim::{Optimizer, UpdateRule};
use crate::rng::SeededSampler;
use crate::tensor::{Tape, TensorError, Var};
use crate::worlds::{Mat, StreamKind, World};

/// Architecture used when no override is given: two hidden layers of width 64.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// Input grid used to score continuous encoders against the closed-form posterior.
pub const DEFAULT_EVAL_GRID: [f64; 7] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];

/// Minimum metric improvement that resets the stall counter.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-4;

/// Consecutive non-improving evaluations tolerated before stopping.
pub const STALL_LIMIT: u32 = 10;

/// Default input-noise width: deterministic networks on finite worlds (the optimum is a
/// deterministic map into distribution space), a 4-wide gaussian channel on continuous ones.
pub fn default_noise_dim(world: &World) -> usize {
    match world {
        World::Discrete(_) => 0,
        World::LinearGaussian(_) => 4,
    }
}

/// Fixed stream ids, one per sampling purpose, so that consuming more draws for one
/// purpose (say, a larger `k`) never shifts the sequence seen by any other. Stream 10 is
/// reserved by evaluation ([`crate::metrics::EVAL_NOISE_STREAM`]).
pub mod streams {
    /// (x, z) pairs for source discriminator updates
    pub const SOURCE_JOINT: u64 = 0;
    /// labels for the fake side of source discriminator updates
    pub const SOURCE_LABEL_DISC: u64 = 1;
    /// labels for source generator updates
    pub const SOURCE_LABEL_GEN: u64 = 2;
    /// unlabelled inputs for target steps
    pub const TARGET_INPUT: u64 = 3;
    /// labels from the shifted prior for target steps
    pub const TARGET_PRIOR: u64 = 4;
    /// generator input noise, source discriminator updates
    pub const NOISE_SOURCE_DISC: u64 = 5;
    /// generator input noise, source generator updates
    pub const NOISE_SOURCE_GEN: u64 = 6;
    /// generator input noise, target steps
    pub const NOISE_TARGET_GEN: u64 = 7;
    /// encoder input noise, target steps
    pub const NOISE_TARGET_ENC: u64 = 8;
    /// network weight initialization
    pub const INIT: u64 = 9;
    /// gradient-penalty sampling (interpolation ε, then any vertex draws), source game
    pub const PENALTY_SOURCE: u64 = 11;
    /// gradient-penalty sampling, target game
    pub const PENALTY_TARGET: u64 = 12;
}

/// Whether the target-phase generator/encoder update recomputes discriminator scores
/// against the just-updated discriminator (default) or reuses the scores the
/// discriminator update saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenUpdateMode {
    Recompute,
    Reuse,
}

/// Schedule as it arrives from a config file: integers unconstrained, every field
/// optional. [`RawSchedule::validated`] turns it into a [`TrainingSchedule`] or reports
/// the offending field by name.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RawSchedule {
    pub m: i64,
    pub n: i64,
    pub k: i64,
    #[serde(rename = "M")]
    pub batch: i64,
    pub lr_disc: f64,
    pub lr_gen: f64,
    pub loss_variant: LossVariant,
    pub max_rounds: i64,
    pub eval_every: i64,
    /// taken as a raw 64-bit pattern
    pub seed: i64,
    pub gen_update: GenUpdateMode,
}

impl Default for RawSchedule {
    fn default() -> Self {
        RawSchedule {
            m: 1,
            n: 1,
            k: 1,
            batch: 128,
            lr_disc: 1e-4,
            lr_gen: 1e-4,
            loss_variant: LossVariant::non_saturating(),
            max_rounds: 20_000,
            eval_every: 100,
            seed: 0,
            gen_update: GenUpdateMode::Recompute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid schedule field `{field}`: {why}")]
pub struct ScheduleError {
    pub field: &'static str,
    pub why: String,
}

impl RawSchedule {
    pub fn validated(&self) -> std::result::Result<TrainingSchedule, ScheduleError> {
        fn at_least(field: &'static str, v: i64, min: i64) -> std::result::Result<i64, ScheduleError> {
            if v < min {
                return Err(ScheduleError { field, why: format!("must be >= {min}, got {v}") });
            }
            Ok(v)
        }
        fn rate(field: &'static str, v: f64) -> std::result::Result<f64, ScheduleError> {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScheduleError { field, why: format!("must be finite and >= 0, got {v}") });
            }
            Ok(v)
        }
        let m = at_least("m", self.m, 0)? as usize;
        let n = at_least("n", self.n, 0)? as usize;
        if m + n == 0 {
            return Err(ScheduleError { field: "m", why: "m + n must be at least 1".into() });
        }
        let k = at_least("k", self.k, 1)? as usize;
        let batch = at_least("M", self.batch, 1)? as usize;
        let lr_disc = rate("lr-disc", self.lr_disc)?;
        let lr_gen = rate("lr-gen", self.lr_gen)?;
        self.loss_variant
            .validate()
            .map_err(|why| ScheduleError { field: "gp-weight", why })?;
        let max_rounds = at_least("max-rounds", self.max_rounds, 0)? as u64;
        let eval_every = at_least("eval-every", self.eval_every, 1)? as u64;
        Ok(TrainingSchedule {
            m,
            n,
            k,
            batch,
            lr_disc,
            lr_gen,
            loss_variant: self.loss_variant,
            max_rounds,
            eval_every,
            seed: self.seed as u64,
            gen_update: self.gen_update,
        })
    }
}

/// A validated schedule; every invariant holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainingSchedule {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    #[serde(rename = "M")]
    pub batch: usize,
    pub lr_disc: f64,
    pub lr_gen: f64,
    pub loss_variant: LossVariant,
    pub max_rounds: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub gen_update: GenUpdateMode,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        RawSchedule::default().validated().expect("defaults are valid")
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{phase} update failed (round {round}, step {step}): {source}")]
    Step {
        phase: &'static str,
        round: u64,
        step: u64,
        #[source]
        source: TensorError,
    },
    #[error("non-finite {phase} loss (round {round}, step {step})")]
    NonFinite { phase: &'static str, round: u64, step: u64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Most recent loss value seen for each of the four objectives (zero until the owning
/// phase has run at least once).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseLosses {
    pub source_disc: f64,
    pub source_gen: f64,
    pub target_disc: f64,
    pub target_gen: f64,
}

#[derive(Debug, Clone)]
struct Rngs {
    source_joint: SeededSampler,
    source_label_disc: SeededSampler,
    source_label_gen: SeededSampler,
    target_input: SeededSampler,
    target_prior: SeededSampler,
    noise_source_disc: SeededSampler,
    noise_source_gen: SeededSampler,
    noise_target_gen: SeededSampler,
    noise_target_enc: SeededSampler,
    penalty_source: SeededSampler,
    penalty_target: SeededSampler,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        let s = |stream| SeededSampler::new(seed, stream);
        Rngs {
            source_joint: s(streams::SOURCE_JOINT),
            source_label_disc: s(streams::SOURCE_LABEL_DISC),
            source_label_gen: s(streams::SOURCE_LABEL_GEN),
            target_input: s(streams::TARGET_INPUT),
            target_prior: s(streams::TARGET_PRIOR),
            noise_source_disc: s(streams::NOISE_SOURCE_DISC),
            noise_source_gen: s(streams::NOISE_SOURCE_GEN),
            noise_target_gen: s(streams::NOISE_TARGET_GEN),
            noise_target_enc: s(streams::NOISE_TARGET_ENC),
            penalty_source: s(streams::PENALTY_SOURCE),
            penalty_target: s(streams::PENALTY_TARGET),
        }
    }
}

/// Everything that evolves during a run: the four networks, their optimizers, counters,
/// the metric history, and the sampling streams.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: NetworkBundle,
    pub opt_gen_x: Optimizer,
    pub opt_enc_z: Optimizer,
    pub opt_disc_s: Optimizer,
    pub opt_disc_t: Optimizer,
    pub round: u64,
    pub source_steps: u64,
    pub target_steps: u64,
    pub history: Vec<MetricRecord>,
    pub last: PhaseLosses,
    rngs: Rngs,
}

impl TrainState {
    pub fn new(world: &World, schedule: &TrainingSchedule) -> Self {
        Self::with_arch(world, schedule, &DEFAULT_HIDDEN, default_noise_dim(world))
    }

    /// Build a state with explicit hidden widths and noise width (tests and ablations).
    pub fn with_arch(
        world: &World,
        schedule: &TrainingSchedule,
        hidden: &[usize],
        noise_dim: usize,
    ) -> Self {
        let mut init = SeededSampler::new(schedule.seed, streams::INIT);
        let discrete = matches!(world, World::Discrete(_));
        let bundle = NetworkBundle::new(
            world.x_dim(),
            world.z_dim(),
            hidden,
            noise_dim,
            discrete,
            schedule.loss_variant,
            &mut init,
        );
        let adam = UpdateRule::adam_default();
        TrainState {
            opt_gen_x: Optimizer::new(adam, schedule.lr_gen, &bundle.gen_x.params),
            opt_enc_z: Optimizer::new(adam, schedule.lr_gen, &bundle.enc_z.params),
            opt_disc_s: Optimizer::new(adam, schedule.lr_disc, &bundle.disc_s.params),
            opt_disc_t: Optimizer::new(adam, schedule.lr_disc, &bundle.disc_t.params),
            bundle,
            round: 0,
            source_steps: 0,
            target_steps: 0,
            history: Vec::new(),
            last: PhaseLosses::default(),
            rngs: Rngs::new(schedule.seed),
        }
    }
}

fn annotate(phase: &'static str, round: u64, step: u64) -> impl Fn(TensorError) -> TrainError {
    move |source| TrainError::Step { phase, round, step, source }
}

fn draw_noise(rng: &mut SeededSampler, rows: usize, noise_dim: usize) -> Option<Mat> {
    if noise_dim == 0 {
        return None;
    }
    let data = (0..rows * noise_dim).map(|_| rng.gaussian()).collect();
    Some(Mat::new(data, rows, noise_dim))
}

fn hconcat(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.rows, b.rows);
    let mut data = Vec::with_capacity(a.rows * (a.cols + b.cols));
    for i in 0..a.rows {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Mat::new(data, a.rows, a.cols + b.cols)
}

/// One one-hot row per input row, drawn from that row of a probability table.
fn sample_onehot_rows(pi: &[f64], rows: usize, k: usize, rng: &mut SeededSampler) -> Mat {
    let mut data = vec![0.0; rows * k];
    for j in 0..rows {
        let idx = rng.categorical(&pi[j * k..(j + 1) * k]);
        data[j * k + idx] = 1.0;
    }
    Mat::new(data, rows, k)
}

fn constant(tape: &mut Tape, m: &Mat) -> std::result::Result<Var, TensorError> {
    tape.constant(m.data.clone(), m.rows, m.cols)
}

fn maybe_constant(
    tape: &mut Tape,
    m: Option<&Mat>,
) -> std::result::Result<Option<Var>, TensorError> {
    m.map(|m| constant(tape, m)).transpose()
}

/// Discriminator outputs on the full vertex grid of a `k`-way output domain, one row of
/// `k` scores per condition row. `vertex_is_x` places the vertex in the discriminator's
/// input slot (generated-input side) rather than its label slot (encoded-label side).
fn grid_scores(
    tape: &mut Tape,
    bundle: &NetworkBundle,
    id: NetId,
    k: usize,
    cond: &Mat,
    vertex_is_x: bool,
    as_prob: bool,
    tracked: bool,
) -> std::result::Result<Var, TensorError> {
    let (verts, conds) = vertex_inputs(k, cond);
    let v = tape.constant(verts.data, verts.rows, verts.cols)?;
    let c = tape.constant(conds.data, conds.rows, conds.cols)?;
    let (x, z) = if vertex_is_x { (v, c) } else { (c, v) };
    let out = if as_prob {
        match id {
            NetId::DiscS => bundle.disc_s_prob(tape, x, z, tracked)?,
            NetId::DiscT => bundle.disc_t_prob(tape, x, z, tracked)?,
            _ => unreachable!("grid scoring is a discriminator operation"),
        }
    } else {
        bundle.critic_score(tape, id, x, z, tracked)?
    };
    tape.reshape(out, cond.rows, k)
}

/// (1/rows)·Σ w ⊙ s — expected critic score over a categorical output distribution.
fn weighted_mean(tape: &mut Tape, w: Var, s: Var) -> std::result::Result<Var, TensorError> {
    let prod = tape.mul(w, s)?;
    let total = tape.sum_all(prod)?;
    tape.scale(total, 1.0 / w.rows as f64)
}

/// Source-game discriminator objective for one batch, exactly as a training step builds
/// it: real pairs scored against the (detached) generator's fakes, with the exact inner
/// expectation on finite worlds and the gradient penalty under the Wasserstein variant.
/// Only the source discriminator's parameters are registered as trainable.
#[allow(clippy::too_many_arguments)]
pub fn build_source_disc_loss(
    tape: &mut Tape,
    bundle: &NetworkBundle,
    variant: LossVariant,
    world: &World,
    x_r: &Mat,
    z_r: &Mat,
    z_f: &Mat,
    gen_noise: Option<&Mat>,
    penalty_rng: &mut SeededSampler,
) -> std::result::Result<Var, TensorError> {
    let m = x_r.rows;
    let xr = constant(tape, x_r)?;
    let zr = constant(tape, z_r)?;
    let zf = constant(tape, z_f)?;
    let noise = maybe_constant(tape, gen_noise)?;
    match (world, variant.kind) {
        (World::Discrete(w), LossKind::StandardSaturating | LossKind::NonSaturating) => {
            let rho_r = bundle.disc_s_prob(tape, xr, zr, true)?;
            let pi = bundle.generate(tape, zf, noise, false)?;
            let grid = grid_scores(tape, bundle, NetId::DiscS, w.x_arity(), z_f, true, true, true)?;
            source_disc_loss_expected(tape, rho_r, grid, pi)
        }
        (World::LinearGaussian(_), LossKind::StandardSaturating | LossKind::NonSaturating) => {
            let rho_r = bundle.disc_s_prob(tape, xr, zr, true)?;
            let xhat = bundle.generate(tape, zf, noise, false)?;
            let rho_g = bundle.disc_s_prob(tape, xhat, zf, true)?;
            source_disc_loss(tape, rho_r, rho_g)
        }
        (World::Discrete(w), LossKind::WassersteinGp) => {
            let s_real = bundle.critic_score(tape, NetId::DiscS, xr, zr, true)?;
            let pi = bundle.generate(tape, zf, noise, false)?;
            let grid = grid_scores(tape, bundle, NetId::DiscS, w.x_arity(), z_f, true, false, true)?;
            let fake_mean = weighted_mean(tape, pi, grid)?;
            let real_mean = tape.mean_all(s_real)?;
            let diff = tape.sub(fake_mean, real_mean)?;
            let eps: Vec<f64> = (0..m).map(|_| penalty_rng.uniform()).collect();
            let pi_vals = tape.value(pi).to_vec();
            let fake_x = sample_onehot_rows(&pi_vals, m, w.x_arity(), penalty_rng);
            let real_rows = hconcat(x_r, z_r);
            let fake_rows = hconcat(&fake_x, z_f);
            let gp = gradient_penalty(
                tape,
                &bundle.disc_s,
                bundle.slot_base(NetId::DiscS),
                &real_rows,
                &fake_rows,
                &eps,
                true,
            )?;
            let pen = tape.scale(gp, variant.gp_weight)?;
            tape.add(diff, pen)
        }
        (World::LinearGaussian(_), LossKind::WassersteinGp) => {
            let s_real = bundle.critic_score(tape, NetId::DiscS, xr, zr, true)?;
            let xhat = bundle.generate(tape, zf, noise, false)?;
            let s_fake = bundle.critic_score(tape, NetId::DiscS, xhat, zf, true)?;
            let eps: Vec<f64> = (0..m).map(|_| penalty_rng.uniform()).collect();
            let xhat_mat = Mat::new(tape.value(xhat).to_vec(), m, x_r.cols);
            let real_rows = hconcat(x_r, z_r);
            let fake_rows = hconcat(&xhat_mat, z_f);
            let gp = gradient_penalty(
                tape,
                &bundle.disc_s,
                bundle.slot_base(NetId::DiscS),
                &real_rows,
                &fake_rows,
                &eps,
                true,
            )?;
            let (disc, _) = wasserstein_losses(tape, s_real, s_fake, gp, variant.gp_weight)?;
            Ok(disc)
        }
    }
}

/// Source-game generator objective for one batch: the generator's parameters are
/// trainable, the discriminator participates as a constant.
pub fn build_source_gen_loss(
    tape: &mut Tape,
    bundle: &NetworkBundle,
    variant: LossVariant,
    world: &World,
    z: &Mat,
    gen_noise: Option<&Mat>,
) -> std::result::Result<Var, TensorError> {
    let zv = constant(tape, z)?;
    let noise = maybe_constant(tape, gen_noise)?;
    match (world, variant.kind) {
        (World::Discrete(w), LossKind::StandardSaturating | LossKind::NonSaturating) => {
            let pi = bundle.generate(tape, zv, noise, true)?;
            let grid = grid_scores(tape, bundle, NetId::DiscS, w.x_arity(), z, true, true, false)?;
            source_gen_loss_expected(tape, grid, pi, variant.kind)
        }
        (World::LinearGaussian(_), LossKind::StandardSaturating | LossKind::NonSaturating) => {
            let xhat = bundle.generate(tape, zv, noise, true)?;
            let rho_g = bundle.disc_s_prob(tape, xhat, zv, false)?;
            source_gen_loss(tape, rho_g, variant.kind)
        }
        (World::Discrete(w), LossKind::WassersteinGp) => {
            let pi = bundle.generate(tape, zv, noise, true)?;
            let grid = grid_scores(tape, bundle, NetId::DiscS, w.x_arity(), z, true, false, false)?;
            let fake_mean = weighted_mean(tape, pi, grid)?;
            tape.scale(fake_mean, -1.0)
        }
        (World::LinearGaussian(_), LossKind::WassersteinGp) => {
            let xhat = bundle.generate(tape, zv, noise, true)?;
            let s_fake = bundle.critic_score(tape, NetId::DiscS, xhat, zv, false)?;
            wasserstein_gen_loss(tape, s_fake)
        }
    }
}

pub struct TargetLosses {
    pub disc: Var,
    pub gen: Var,
}

/// Both target-game objectives from one set of forward passes. `track_disc` /
/// `track_gen` control which parameter sets enter the tape as trainable; the gradient
/// penalty (Wasserstein only) is built only when the discriminator is being trained.
#[allow(clippy::too_many_arguments)]
pub fn build_target_losses(
    tape: &mut Tape,
    bundle: &NetworkBundle,
    variant: LossVariant,
    world: &World,
    x_t: &Mat,
    z_p: &Mat,
    gen_noise: Option<&Mat>,
    enc_noise: Option<&Mat>,
    track_disc: bool,
    track_gen: bool,
    penalty_rng: &mut SeededSampler,
) -> std::result::Result<TargetLosses, TensorError> {
    let m = x_t.rows;
    let x = constant(tape, x_t)?;
    let z = constant(tape, z_p)?;
    let g_noise = maybe_constant(tape, gen_noise)?;
    let e_noise = maybe_constant(tape, enc_noise)?;
    match (world, variant.kind) {
        (World::Discrete(w), LossKind::StandardSaturating | LossKind::NonSaturating) => {
            let pi_e = bundle.encode(tape, x, e_noise, track_gen)?;
            let pi_g = bundle.generate(tape, z, g_noise, track_gen)?;
            let rho_e =
                grid_scores(tape, bundle, NetId::DiscT, w.z_arity(), x_t, false, true, track_disc)?;
            let rho_g =
                grid_scores(tape, bundle, NetId::DiscT, w.x_arity(), z_p, true, true, track_disc)?;
            Ok(TargetLosses {
                disc: target_disc_loss_expected(tape, rho_e, pi_e, rho_g, pi_g)?,
                gen: target_gen_loss_expected(tape, rho_e, pi_e, rho_g, pi_g)?,
            })
        }
        (World::LinearGaussian(_), LossKind::StandardSaturating | LossKind::NonSaturating) => {
            let zhat = bundle.encode(tape, x, e_noise, track_gen)?;
            let xhat = bundle.generate(tape, z, g_noise, track_gen)?;
            let rho_e = bundle.disc_t_prob(tape, x, zhat, track_disc)?;
            let rho_g = bundle.disc_t_prob(tape, xhat, z, track_disc)?;
            Ok(TargetLosses {
                disc: target_disc_loss(tape, rho_e, rho_g)?,
                gen: target_gen_loss(tape, rho_e, rho_g)?,
            })
        }
        (World::Discrete(w), LossKind::WassersteinGp) => {
            let pi_e = bundle.encode(tape, x, e_noise, track_gen)?;
            let pi_g = bundle.generate(tape, z, g_noise, track_gen)?;
            let grid_e =
                grid_scores(tape, bundle, NetId::DiscT, w.z_arity(), x_t, false, false, track_disc)?;
            let grid_g =
                grid_scores(tape, bundle, NetId::DiscT, w.x_arity(), z_p, true, false, track_disc)?;
            let e_mean = weighted_mean(tape, pi_e, grid_e)?;
            let g_mean = weighted_mean(tape, pi_g, grid_g)?;
            let gen = tape.sub(e_mean, g_mean)?;
            let mut disc = tape.sub(g_mean, e_mean)?;
            if track_disc {
                let eps: Vec<f64> = (0..m).map(|_| penalty_rng.uniform()).collect();
                let pi_e_vals = tape.value(pi_e).to_vec();
                let pi_g_vals = tape.value(pi_g).to_vec();
                let zhat = sample_onehot_rows(&pi_e_vals, m, w.z_arity(), penalty_rng);
                let xhat = sample_onehot_rows(&pi_g_vals, m, w.x_arity(), penalty_rng);
                let real_rows = hconcat(x_t, &zhat);
                let fake_rows = hconcat(&xhat, z_p);
                let gp = gradient_penalty(
                    tape,
                    &bundle.disc_t,
                    bundle.slot_base(NetId::DiscT),
                    &real_rows,
                    &fake_rows,
                    &eps,
                    true,
                )?;
                let pen = tape.scale(gp, variant.gp_weight)?;
                disc = tape.add(disc, pen)?;
            }
            Ok(TargetLosses { disc, gen })
        }
        (World::LinearGaussian(_), LossKind::WassersteinGp) => {
            let zhat = bundle.encode(tape, x, e_noise, track_gen)?;
            let xhat = bundle.generate(tape, z, g_noise, track_gen)?;
            let s_e = bundle.critic_score(tape, NetId::DiscT, x, zhat, track_disc)?;
            let s_g = bundle.critic_score(tape, NetId::DiscT, xhat, z, track_disc)?;
            let me = tape.mean_all(s_e)?;
            let mg = tape.mean_all(s_g)?;
            let gen = tape.sub(me, mg)?;
            let mut disc = tape.sub(mg, me)?;
            if track_disc {
                let eps: Vec<f64> = (0..m).map(|_| penalty_rng.uniform()).collect();
                let zhat_mat = Mat::new(tape.value(zhat).to_vec(), m, z_p.cols);
                let xhat_mat = Mat::new(tape.value(xhat).to_vec(), m, x_t.cols);
                let real_rows = hconcat(x_t, &zhat_mat);
                let fake_rows = hconcat(&xhat_mat, z_p);
                let gp = gradient_penalty(
                    tape,
                    &bundle.disc_t,
                    bundle.slot_base(NetId::DiscT),
                    &real_rows,
                    &fake_rows,
                    &eps,
                    true,
                )?;
                let pen = tape.scale(gp, variant.gp_weight)?;
                disc = tape.add(disc, pen)?;
            }
            Ok(TargetLosses { disc, gen })
        }
    }
}

fn source_disc_step(state: &mut TrainState, world: &World, sch: &TrainingSchedule) -> Result<()> {
    let ann = annotate("source-disc", state.round, state.source_steps);
    let m = sch.batch;
    let real = world.sample(StreamKind::SourceJoint, m, &mut state.rngs.source_joint);
    let x_r = real.x.expect("source joint stream provides inputs");
    let z_r = real.z.expect("source joint stream provides labels");
    let z_f = world
        .sample(StreamKind::SourceLabel, m, &mut state.rngs.source_label_disc)
        .z
        .expect("source label stream provides labels");
    let gen_noise = draw_noise(&mut state.rngs.noise_source_disc, m, state.bundle.noise_dim);
    let mut tape = Tape::new();
    let loss = build_source_disc_loss(
        &mut tape,
        &state.bundle,
        sch.loss_variant,
        world,
        &x_r,
        &z_r,
        &z_f,
        gen_noise.as_ref(),
        &mut state.rngs.penalty_source,
    )
    .map_err(&ann)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            phase: "source-disc",
            round: state.round,
            step: state.source_steps,
        });
    }
    tape.backward(loss).map_err(&ann)?;
    state.bundle.harvest_grads(&tape);
    state.opt_disc_s.step(&mut state.bundle.disc_s.params).map_err(&ann)?;
    state.last.source_disc = value;
    Ok(())
}

fn source_gen_step(state: &mut TrainState, world: &World, sch: &TrainingSchedule) -> Result<()> {
    let ann = annotate("source-gen", state.round, state.source_steps);
    let m = sch.batch;
    let z = world
        .sample(StreamKind::SourceLabel, m, &mut state.rngs.source_label_gen)
        .z
        .expect("source label stream provides labels");
    let gen_noise = draw_noise(&mut state.rngs.noise_source_gen, m, state.bundle.noise_dim);
    let mut tape = Tape::new();
    let loss =
        build_source_gen_loss(&mut tape, &state.bundle, sch.loss_variant, world, &z, gen_noise.as_ref())
            .map_err(&ann)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            phase: "source-gen",
            round: state.round,
            step: state.source_steps,
        });
    }
    tape.backward(loss).map_err(&ann)?;
    state.bundle.harvest_grads(&tape);
    state.opt_gen_x.step(&mut state.bundle.gen_x.params).map_err(&ann)?;
    state.last.source_gen = value;
    Ok(())
}

/// The source-game block of one round: `m` outer steps, each being `k` discriminator
/// updates followed by one shared-generator update. `m = 0` is a no-op.
pub fn source_phase(state: &mut TrainState, world: &World, sch: &TrainingSchedule) -> Result<()> {
    for _ in 0..sch.m {
        for _ in 0..sch.k {
            source_disc_step(state, world, sch)?;
        }
        source_gen_step(state, world, sch)?;
        state.source_steps += 1;
    }
    Ok(())
}

fn target_step(state: &mut TrainState, world: &World, sch: &TrainingSchedule) -> Result<()> {
    let m = sch.batch;
    let round = state.round;
    let step = state.target_steps;
    let x_t = world
        .sample(StreamKind::TargetInput, m, &mut state.rngs.target_input)
        .x
        .expect("target input stream provides inputs");
    let z_p = world
        .sample(StreamKind::TargetLabelPrior, m, &mut state.rngs.target_prior)
        .z
        .expect("target prior stream provides labels");
    let gen_noise = draw_noise(&mut state.rngs.noise_target_gen, m, state.bundle.noise_dim);
    let enc_noise = draw_noise(&mut state.rngs.noise_target_enc, m, state.bundle.noise_dim);

    match sch.gen_update {
        GenUpdateMode::Recompute => {
            // discriminator update from pre-update generator/encoder outputs
            let ann = annotate("target-disc", round, step);
            let mut tape = Tape::new();
            let losses = build_target_losses(
                &mut tape,
                &state.bundle,
                sch.loss_variant,
                world,
                &x_t,
                &z_p,
                gen_noise.as_ref(),
                enc_noise.as_ref(),
                true,
                false,
                &mut state.rngs.penalty_target,
            )
            .map_err(&ann)?;
            let ld = tape.scalar(losses.disc);
            if !ld.is_finite() {
                return Err(TrainError::NonFinite { phase: "target-disc", round, step });
            }
            tape.backward(losses.disc).map_err(&ann)?;
            state.bundle.harvest_grads(&tape);
            state.opt_disc_t.step(&mut state.bundle.disc_t.params).map_err(&ann)?;
            state.last.target_disc = ld;

            // generator/encoder update from fresh passes against the updated discriminator
            let ann = annotate("target-gen", round, step);
            let mut tape = Tape::new();
            let losses = build_target_losses(
                &mut tape,
                &state.bundle,
                sch.loss_variant,
                world,
                &x_t,
                &z_p,
                gen_noise.as_ref(),
                enc_noise.as_ref(),
                false,
                true,
                &mut state.rngs.penalty_target,
            )
            .map_err(&ann)?;
            let lg = tape.scalar(losses.gen);
            if !lg.is_finite() {
                return Err(TrainError::NonFinite { phase: "target-gen", round, step });
            }
            tape.backward(losses.gen).map_err(&ann)?;
            state.bundle.harvest_grads(&tape);
            state.opt_gen_x.step(&mut state.bundle.gen_x.params).map_err(&ann)?;
            state.opt_enc_z.step(&mut state.bundle.enc_z.params).map_err(&ann)?;
            state.last.target_gen = lg;
        }
        GenUpdateMode::Reuse => {
            // one tape, two objectives over the same score values; each update keeps only
            // the gradients belonging to its own parameter sets
            let ann = annotate("target-disc", round, step);
            let mut tape = Tape::new();
            let losses = build_target_losses(
                &mut tape,
                &state.bundle,
                sch.loss_variant,
                world,
                &x_t,
                &z_p,
                gen_noise.as_ref(),
                enc_noise.as_ref(),
                true,
                true,
                &mut state.rngs.penalty_target,
            )
            .map_err(&ann)?;
            let ld = tape.scalar(losses.disc);
            let lg = tape.scalar(losses.gen);
            if !ld.is_finite() {
                return Err(TrainError::NonFinite { phase: "target-disc", round, step });
            }
            if !lg.is_finite() {
                return Err(TrainError::NonFinite { phase: "target-gen", round, step });
            }
            tape.backward(losses.disc).map_err(&ann)?;
            state.bundle.harvest_grads_for(&tape, &[NetId::DiscT]);
            state.opt_disc_t.step(&mut state.bundle.disc_t.params).map_err(&ann)?;
            state.last.target_disc = ld;

            let ann = annotate("target-gen", round, step);
            tape.clear_grads();
            tape.backward(losses.gen).map_err(&ann)?;
            state.bundle.harvest_grads_for(&tape, &[NetId::GenX, NetId::EncZ]);
            state.opt_gen_x.step(&mut state.bundle.gen_x.params).map_err(&ann)?;
            state.opt_enc_z.step(&mut state.bundle.enc_z.params).map_err(&ann)?;
            state.last.target_gen = lg;
        }
    }
    state.target_steps += 1;
    Ok(())
}

/// The target-game block of one round: `n` steps, each a discriminator update followed by
/// a joint generator/encoder update. `n = 0` is a no-op.
pub fn target_phase(state: &mut TrainState, world: &World, sch: &TrainingSchedule) -> Result<()> {
    for _ in 0..sch.n {
        target_step(state, world, sch)?;
    }
    Ok(())
}

fn evaluate(
    state: &TrainState,
    world: &World,
    sch: &TrainingSchedule,
    started: &Instant,
) -> std::result::Result<MetricRecord, MetricsError> {
    let (tv, rmse, margin) = match world {
        World::Discrete(w) => {
            let tv = encoder_tv(&state.bundle, w, sch.seed)?;
            let gap = encoder_tv_gap(&state.bundle, w, sch.seed)?;
            (Some(tv), None, gap.gap)
        }
        World::LinearGaussian(w) => {
            let r = encoder_rmse(&state.bundle, w, &DEFAULT_EVAL_GRID, sch.seed)?;
            let g = encoder_rmse_gap(&state.bundle, w, &DEFAULT_EVAL_GRID, sch.seed)?;
            (None, Some(r), g)
        }
    };
    Ok(MetricRecord {
        round: state.round,
        source_disc: state.last.source_disc,
        source_gen: state.last.source_gen,
        target_disc: state.last.target_disc,
        target_gen: state.last.target_gen,
        encoder_tv: tv,
        encoder_rmse: rmse,
        label_shift_margin: margin,
        wall_clock_ms: started.elapsed().as_millis() as u64,
        seed: sch.seed,
    })
}

/// Drive an existing state until the stopping rule fires or `max-rounds` is reached.
/// Every `eval-every` rounds the oracle-distance metric is recorded; training stops when
/// that metric has failed to improve by [`IMPROVEMENT_TOLERANCE`] for [`STALL_LIMIT`]
/// consecutive evaluations. On return the bundle holds the best-evaluated snapshot (the
/// history still describes the full trajectory).
pub fn train_rounds(state: &mut TrainState, world: &World, sch: &TrainingSchedule) -> Result<()> {
    let started = Instant::now();
    let mut best: Option<(f64, NetworkBundle)> = None;
    let mut stall = 0u32;
    for round in (state.round + 1)..=(sch.max_rounds) {
        state.round = round;
        source_phase(state, world, sch)?;
        target_phase(state, world, sch)?;
        if round % sch.eval_every == 0 {
            let record = evaluate(state, world, sch, &started)?;
            let metric = record
                .encoder_tv
                .or(record.encoder_rmse)
                .expect("evaluation always yields a metric");
            state.history.push(record);
            match &mut best {
                Some((b, snap)) if metric < *b - IMPROVEMENT_TOLERANCE => {
                    *b = metric;
                    *snap = state.bundle.clone();
                    stall = 0;
                }
                Some(_) => {
                    stall += 1;
                    if stall >= STALL_LIMIT {
                        break;
                    }
                }
                None => best = Some((metric, state.bundle.clone())),
            }
        }
    }
    if let Some((_, snap)) = best {
        state.bundle = snap;
    }
    Ok(())
}

/// Fresh state, full run. See [`train_rounds`].
pub fn train(world: &World, schedule: &TrainingSchedule) -> Result<TrainState> {
    let mut state = TrainState::new(world, schedule);
    train_rounds(&mut state, world, schedule)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::write_jsonl;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn sched(edit: impl FnOnce(&mut RawSchedule)) -> TrainingSchedule {
        let mut raw = RawSchedule::default();
        edit(&mut raw);
        raw.validated().unwrap()
    }

    fn all_params(bundle: &NetworkBundle) -> Vec<Vec<f64>> {
        crate::adversarial::ALL_NETS
            .iter()
            .flat_map(|&id| bundle.net(id).params.iter().map(|p| p.data.clone()))
            .collect()
    }

    #[test]
    fn schedule_defaults_and_validation() {
        let s: RawSchedule = serde_json::from_str("{}").unwrap();
        let v = s.validated().unwrap();
        assert_eq!((v.m, v.n, v.k, v.batch), (1, 1, 1, 128));
        assert_eq!((v.max_rounds, v.eval_every, v.seed), (20_000, 100, 0));
        assert_eq!(v.lr_disc, 1e-4);
        assert_eq!(v.gen_update, GenUpdateMode::Recompute);

        let bad: RawSchedule = serde_json::from_str(r#"{"m": -1}"#).unwrap();
        let err = bad.validated().unwrap_err();
        assert_eq!(err.field, "m");
        assert!(err.to_string().contains("`m`"));

        let bad: RawSchedule = serde_json::from_str(r#"{"m": 0, "n": 0}"#).unwrap();
        assert!(bad.validated().is_err());
        let bad: RawSchedule = serde_json::from_str(r#"{"M": 0}"#).unwrap();
        assert_eq!(bad.validated().unwrap_err().field, "M");
        let bad: RawSchedule = serde_json::from_str(r#"{"eval-every": 0}"#).unwrap();
        assert_eq!(bad.validated().unwrap_err().field, "eval-every");
        let bad: RawSchedule = serde_json::from_str(r#"{"lr-disc": -0.5}"#).unwrap();
        assert_eq!(bad.validated().unwrap_err().field, "lr-disc");
        let bad: RawSchedule = serde_json::from_str(
            r#"{"loss-variant": {"kind": "wasserstein-gp", "gp-weight": 0.0}}"#,
        )
        .unwrap();
        assert_eq!(bad.validated().unwrap_err().field, "gp-weight");

        // typos are rejected at parse time
        assert!(serde_json::from_str::<RawSchedule>(r#"{"lr-disk": 0.1}"#)
            .unwrap_err()
            .to_string()
            .contains("lr-disk"));

        // resolved form serializes with the uppercase batch key
        let line = serde_json::to_string(&v).unwrap();
        assert!(line.contains("\"M\":128"), "{line}");
        assert!(line.contains("\"gen-update\":\"recompute\""), "{line}");
    }

    #[test]
    fn zero_learning_rates_leave_parameters_bitwise_unchanged() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.lr_disc = 0.0;
            r.lr_gen = 0.0;
            r.batch = 8;
            r.max_rounds = 3;
            r.eval_every = 1;
        });
        let mut state = TrainState::with_arch(&world, &s, &[6], 0);
        let before = all_params(&state.bundle);
        train_rounds(&mut state, &world, &s).unwrap();
        assert_eq!(all_params(&state.bundle), before);
        assert_eq!(state.history.len(), 3);
        for rec in &state.history {
            assert!(rec.source_disc.is_finite() && rec.source_disc != 0.0);
            assert!(rec.target_gen.is_finite() && rec.target_gen != 0.0);
        }
    }

    #[test]
    fn empty_phases_are_no_ops() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.m = 0;
            r.batch = 4;
        });
        let mut state = TrainState::with_arch(&world, &s, &[4], 0);
        let before = all_params(&state.bundle);
        source_phase(&mut state, &world, &s).unwrap();
        assert_eq!(all_params(&state.bundle), before);
        assert_eq!(state.source_steps, 0);

        let s = sched(|r| {
            r.n = 0;
            r.batch = 4;
        });
        target_phase(&mut state, &world, &s).unwrap();
        assert_eq!(all_params(&state.bundle), before);
        assert_eq!(state.target_steps, 0);
    }

    #[test]
    fn phase_level_parameter_isolation() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.batch = 8;
            r.lr_disc = 1e-2;
            r.lr_gen = 1e-2;
        });
        let mut state = TrainState::with_arch(&world, &s, &[6], 0);
        let init = state.bundle.clone();

        source_phase(&mut state, &world, &s).unwrap();
        let after_source = state.bundle.clone();
        let moved = |a: &NetworkBundle, b: &NetworkBundle, id: NetId| {
            a.net(id).params.iter().zip(&b.net(id).params).any(|(p, q)| p.data != q.data)
        };
        assert!(moved(&init, &after_source, NetId::DiscS), "source disc trains");
        assert!(moved(&init, &after_source, NetId::GenX), "source gen trains");
        assert!(!moved(&init, &after_source, NetId::EncZ), "encoder untouched by source phase");
        assert!(!moved(&init, &after_source, NetId::DiscT), "target disc untouched by source phase");

        target_phase(&mut state, &world, &s).unwrap();
        assert!(moved(&after_source, &state.bundle, NetId::DiscT), "target disc trains");
        assert!(moved(&after_source, &state.bundle, NetId::GenX), "shared generator trains in target phase");
        assert!(moved(&after_source, &state.bundle, NetId::EncZ), "encoder trains in target phase");
        assert!(!moved(&after_source, &state.bundle, NetId::DiscS), "source disc untouched by target phase");
    }

    #[test]
    fn all_zero_networks_give_closed_form_losses() {
        // zero weights: uniform generator/encoder tables, discriminators at exactly ½
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.lr_disc = 0.0;
            r.lr_gen = 0.0;
            r.batch = 16;
        });
        let mut state = TrainState::with_arch(&world, &s, &[4], 0);
        for id in crate::adversarial::ALL_NETS {
            for p in &mut state.bundle.net_mut(id).params {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        source_phase(&mut state, &world, &s).unwrap();
        target_phase(&mut state, &world, &s).unwrap();
        let two_ln_2 = 2.0 * std::f64::consts::LN_2;
        approx(state.last.source_disc, two_ln_2, 1e-12);
        approx(state.last.source_gen, std::f64::consts::LN_2, 1e-12);
        approx(state.last.target_disc, two_ln_2, 1e-12);
        approx(state.last.target_gen, two_ln_2, 1e-12);
    }

    #[test]
    fn same_seed_same_schedule_is_bitwise_reproducible() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.batch = 8;
            r.max_rounds = 5;
            r.eval_every = 1;
            r.seed = 99;
        });
        let run = || {
            let mut st = TrainState::with_arch(&world, &s, &[6], 0);
            train_rounds(&mut st, &world, &s).unwrap();
            st
        };
        let a = run();
        let b = run();
        assert_eq!(all_params(&a.bundle), all_params(&b.bundle));
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        write_jsonl(&a.history, &mut ja).unwrap();
        write_jsonl(&b.history, &mut jb).unwrap();
        assert_eq!(ja, jb, "metric streams must be byte-identical");
    }

    #[test]
    fn target_gen_update_sees_the_updated_discriminator() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.m = 0;
            r.batch = 8;
            r.lr_disc = 0.05;
            r.lr_gen = 0.05;
        });
        let mut full = TrainState::with_arch(&world, &s, &[6], 0);
        let mut manual = full.clone();
        target_phase(&mut full, &world, &s).unwrap();

        // replay by hand: same draws, disc update first, then a fresh gen-loss pass
        let m = s.batch;
        let x_t = world.sample(StreamKind::TargetInput, m, &mut manual.rngs.target_input).x.unwrap();
        let z_p = world
            .sample(StreamKind::TargetLabelPrior, m, &mut manual.rngs.target_prior)
            .z
            .unwrap();
        let stale = {
            let mut tape = Tape::new();
            let l = build_target_losses(
                &mut tape, &manual.bundle, s.loss_variant, &world, &x_t, &z_p, None, None, false,
                true, &mut manual.rngs.penalty_target,
            )
            .unwrap();
            tape.scalar(l.gen)
        };
        let mut tape = Tape::new();
        let losses = build_target_losses(
            &mut tape, &manual.bundle, s.loss_variant, &world, &x_t, &z_p, None, None, true, false,
            &mut manual.rngs.penalty_target,
        )
        .unwrap();
        tape.backward(losses.disc).unwrap();
        manual.bundle.harvest_grads(&tape);
        manual.opt_disc_t.step(&mut manual.bundle.disc_t.params).unwrap();
        let fresh = {
            let mut tape = Tape::new();
            let l = build_target_losses(
                &mut tape, &manual.bundle, s.loss_variant, &world, &x_t, &z_p, None, None, false,
                true, &mut manual.rngs.penalty_target,
            )
            .unwrap();
            tape.scalar(l.gen)
        };
        assert_eq!(full.last.target_gen, fresh, "recompute mode scores the post-update critic");
        assert_ne!(fresh, stale, "the discriminator update must actually move the loss");
    }

    #[test]
    fn reuse_and_recompute_modes_diverge() {
        let world = World::demo_discrete();
        let mk = |mode| {
            sched(|r| {
                r.batch = 8;
                r.max_rounds = 3;
                r.eval_every = 10;
                r.lr_disc = 0.05;
                r.lr_gen = 0.05;
                r.gen_update = mode;
            })
        };
        let run = |s: &TrainingSchedule| {
            let mut st = TrainState::with_arch(&world, s, &[6], 0);
            train_rounds(&mut st, &world, s).unwrap();
            all_params(&st.bundle)
        };
        let rec = run(&mk(GenUpdateMode::Recompute));
        let reu = run(&mk(GenUpdateMode::Reuse));
        assert_ne!(rec, reu);
    }

    #[test]
    fn stall_stopping_rule_fires_after_ten_flat_evaluations() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.lr_disc = 0.0;
            r.lr_gen = 0.0;
            r.batch = 4;
            r.max_rounds = 100;
            r.eval_every = 1;
        });
        let mut state = TrainState::with_arch(&world, &s, &[4], 0);
        train_rounds(&mut state, &world, &s).unwrap();
        // one improving evaluation (from nothing) plus ten stalls
        assert_eq!(state.history.len(), 11);
        assert_eq!(state.round, 11);
        let rounds: Vec<u64> = state.history.iter().map(|r| r.round).collect();
        assert!(rounds.windows(2).all(|w| w[0] < w[1]), "strictly increasing rounds");
    }

    #[test]
    fn max_rounds_zero_returns_initial_state_and_empty_history() {
        let world = World::demo_gaussian();
        let s = sched(|r| r.max_rounds = 0);
        let state = train(&world, &s).unwrap();
        assert!(state.history.is_empty());
        assert_eq!(state.round, 0);
        assert_eq!(state.source_steps, 0);
    }

    #[test]
    fn best_snapshot_is_restored_at_stop() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.batch = 16;
            r.max_rounds = 200;
            r.eval_every = 20;
            r.lr_disc = 2e-3;
            r.lr_gen = 2e-3;
            r.seed = 3;
        });
        let mut state = TrainState::with_arch(&world, &s, &[16], 0);
        train_rounds(&mut state, &world, &s).unwrap();
        let final_tv = match &world {
            World::Discrete(w) => encoder_tv(&state.bundle, w, s.seed).unwrap(),
            _ => unreachable!(),
        };
        let best_eval = state
            .history
            .iter()
            .filter_map(|r| r.encoder_tv)
            .fold(f64::INFINITY, f64::min);
        approx(final_tv, best_eval, 1e-15);
    }

    #[test]
    fn short_training_improves_the_encoder_on_the_demo_world() {
        let world = World::demo_discrete();
        let s = sched(|r| {
            r.batch = 32;
            r.max_rounds = 400;
            r.eval_every = 50;
            r.lr_disc = 1e-3;
            r.lr_gen = 1e-3;
            r.seed = 7;
        });
        let state0 = TrainState::with_arch(&world, &s, &[16, 16], 0);
        let w = match &world {
            World::Discrete(w) => w,
            _ => unreachable!(),
        };
        let tv0 = encoder_tv(&state0.bundle, w, s.seed).unwrap();
        let mut state = state0.clone();
        train_rounds(&mut state, &world, &s).unwrap();
        let tv1 = encoder_tv(&state.bundle, w, s.seed).unwrap();
        assert!(
            tv1 < tv0 * 0.5,
            "training should at least halve the oracle distance: {tv0} -> {tv1}"
        );
    }

    #[test]
    fn wasserstein_and_saturating_variants_run_on_both_world_kinds() {
        for world in [World::demo_discrete(), World::demo_gaussian()] {
            for (kind, gp) in [
                (LossKind::WassersteinGp, 10.0),
                (LossKind::StandardSaturating, 10.0),
            ] {
                let s = sched(|r| {
                    r.batch = 8;
                    r.max_rounds = 3;
                    r.eval_every = 10;
                    r.lr_disc = 1e-3;
                    r.lr_gen = 1e-3;
                    r.loss_variant = LossVariant { kind, gp_weight: gp };
                });
                let mut state =
                    TrainState::with_arch(&world, &s, &[6], default_noise_dim(&world));
                let before = all_params(&state.bundle);
                train_rounds(&mut state, &world, &s).unwrap();
                assert_ne!(all_params(&state.bundle), before, "{kind:?} must move parameters");
                assert!(state.last.source_disc.is_finite());
                assert!(state.last.target_gen.is_finite());
            }
        }
    }

    #[test]
    fn poisoned_parameters_abort_with_phase_annotation() {
        let world = World::demo_gaussian();
        let s = sched(|r| r.batch = 4);
        let mut state = TrainState::with_arch(&world, &s, &[4], 0);
        for p in &mut state.bundle.disc_s.params {
            p.data.iter_mut().for_each(|v| *v = 1e308);
        }
        let err = source_phase(&mut state, &world, &s).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("source-disc"), "{msg}");
    }

    #[test]
    fn continuous_world_smoke_run_records_rmse() {
        let world = World::demo_gaussian();
        let s = sched(|r| {
            r.batch = 16;
            r.max_rounds = 4;
            r.eval_every = 2;
            r.seed = 5;
        });
        let mut state = TrainState::with_arch(&world, &s, &[8], 4);
        train_rounds(&mut state, &world, &s).unwrap();
        assert_eq!(state.history.len(), 2);
        for rec in &state.history {
            assert!(rec.encoder_rmse.is_some());
            assert!(rec.encoder_tv.is_none());
            assert!(rec.label_shift_margin.is_finite());
        }
    }
}
