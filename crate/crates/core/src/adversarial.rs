//! The four networks of the two-game setup and every loss expression they train on.
//!
//! One conditional generator (label → input) is shared by two games. In the source game a
//! discriminator scores labelled pairs against generated pairs under the source label
//! marginal; in the target game a second discriminator scores encoder pairings of
//! unlabelled inputs against generated pairings under the shifted label prior. The encoder
//! only ever learns through the second game.
//!
//! Loss functions come in the literal minibatch forms plus two practice variants (the
//! non-saturating generator objective and a Wasserstein critic with gradient penalty), and
//! in *exact-expectation* forms for finite worlds: instead of sampling the generator's
//! categorical output and feeding the discriminator an off-simplex soft vector, the inner
//! expectation over the output domain is computed exactly, with the discriminator
//! evaluated only at one-hot vertices. The expected gradient is identical to the sampled
//! estimator's (the sampling step is integrated out), the discriminator never sees inputs
//! off the data support, and the variance is strictly lower.
//!
//! Probability outputs are clamped to [1e-7, 1−1e-7] before any logarithm; this is a
//! deliberate, documented softening of the exact objectives that prevents infinite losses
//! when a discriminator saturates early in training.

use serde::{Deserialize, Serialize};

use crate::nets::{Head, Mlp};
use crate::rng::SeededSampler;
use crate::tensor::{Tape, TensorError, Var};
use crate::worlds::Mat;

type Result<T> = std::result::Result<T, TensorError>;

/// Probability floor/ceiling applied to discriminator outputs before logs.
pub const RHO_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    StandardSaturating,
    NonSaturating,
    WassersteinGp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LossVariant {
    pub kind: LossKind,
    /// gradient-penalty coefficient; meaningful only for the Wasserstein variant
    #[serde(default = "default_gp_weight")]
    pub gp_weight: f64,
}

fn default_gp_weight() -> f64 {
    10.0
}

impl LossVariant {
    pub fn standard_saturating() -> Self {
        Self { kind: LossKind::StandardSaturating, gp_weight: default_gp_weight() }
    }

    pub fn non_saturating() -> Self {
        Self { kind: LossKind::NonSaturating, gp_weight: default_gp_weight() }
    }

    pub fn wasserstein(gp_weight: f64) -> Self {
        Self { kind: LossKind::WassersteinGp, gp_weight }
    }

    /// Field-level validity: a Wasserstein variant needs a positive penalty weight.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.kind == LossKind::WassersteinGp && !(self.gp_weight > 0.0 && self.gp_weight.is_finite()) {
            return Err(format!("gp-weight must be positive, got {}", self.gp_weight));
        }
        Ok(())
    }
}

impl Default for LossVariant {
    fn default() -> Self {
        Self::non_saturating()
    }
}

/// The four parameter sets, named.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetId {
    GenX,
    EncZ,
    DiscS,
    DiscT,
}

pub const ALL_NETS: [NetId; 4] = [NetId::GenX, NetId::EncZ, NetId::DiscS, NetId::DiscT];

/// Generator, encoder, and the two discriminators, plus the shapes they agree on.
#[derive(Debug, Clone)]
pub struct NetworkBundle {
    /// (label ⊕ noise) → input; shared by both games
    pub gen_x: Mlp,
    /// (input ⊕ noise) → label; the inference artifact, trained only in the target game
    pub enc_z: Mlp,
    /// source-game discriminator over (input ⊕ label)
    pub disc_s: Mlp,
    /// target-game discriminator over (input ⊕ label)
    pub disc_t: Mlp,
    pub noise_dim: usize,
    pub x_dim: usize,
    pub z_dim: usize,
}

impl NetworkBundle {
    /// `discrete` selects softmax heads (distribution outputs) for generator and encoder;
    /// continuous worlds use linear heads. Discriminators get sigmoid heads except under
    /// the Wasserstein variant, whose critics are unconstrained.
    pub fn new(
        x_dim: usize,
        z_dim: usize,
        hidden: &[usize],
        noise_dim: usize,
        discrete: bool,
        variant: LossVariant,
        rng: &mut SeededSampler,
    ) -> Self {
        let cond_head = if discrete { Head::Softmax } else { Head::Linear };
        let disc_head = if variant.kind == LossKind::WassersteinGp { Head::Linear } else { Head::Sigmoid };
        NetworkBundle {
            gen_x: Mlp::new("gen-x", z_dim + noise_dim, hidden, x_dim, cond_head, rng),
            enc_z: Mlp::new("enc-z", x_dim + noise_dim, hidden, z_dim, cond_head, rng),
            disc_s: Mlp::new("disc-s", x_dim + z_dim, hidden, 1, disc_head, rng),
            disc_t: Mlp::new("disc-t", x_dim + z_dim, hidden, 1, disc_head, rng),
            noise_dim,
            x_dim,
            z_dim,
        }
    }

    pub fn net(&self, id: NetId) -> &Mlp {
        match id {
            NetId::GenX => &self.gen_x,
            NetId::EncZ => &self.enc_z,
            NetId::DiscS => &self.disc_s,
            NetId::DiscT => &self.disc_t,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut Mlp {
        match id {
            NetId::GenX => &mut self.gen_x,
            NetId::EncZ => &mut self.enc_z,
            NetId::DiscS => &mut self.disc_s,
            NetId::DiscT => &mut self.disc_t,
        }
    }

    /// First parameter slot of a network inside a shared tape; the four networks occupy
    /// disjoint, contiguous slot ranges in `ALL_NETS` order.
    pub fn slot_base(&self, id: NetId) -> usize {
        let mut base = 0;
        for n in ALL_NETS {
            if n == id {
                return base;
            }
            base += self.net(n).params.len();
        }
        unreachable!()
    }

    /// Route every parameter gradient recorded on `tape` into the owning network's
    /// parameters. A parameter registered several times on one tape (e.g. a critic run on
    /// real, fake, and interpolated batches) has its gradients summed here.
    pub fn harvest_grads(&mut self, tape: &Tape) {
        self.harvest_grads_for(tape, &ALL_NETS);
    }

    /// Like [`Self::harvest_grads`] but keeps only the gradients belonging to the listed
    /// networks, silently dropping the rest. Used when one tape carries two objectives and
    /// each update must see only its own blamed parameters.
    pub fn harvest_grads_for(&mut self, tape: &Tape, ids: &[NetId]) {
        let bases: Vec<(usize, usize)> = ALL_NETS
            .iter()
            .map(|&n| (self.slot_base(n), self.net(n).params.len()))
            .collect();
        for (slot, grad) in tape.param_grads() {
            for (i, &(base, len)) in bases.iter().enumerate() {
                if slot >= base && slot < base + len {
                    if ids.contains(&ALL_NETS[i]) {
                        self.net_mut(ALL_NETS[i]).params[slot - base].accumulate_grad(grad);
                    }
                    break;
                }
            }
        }
    }

    fn with_noise(&self, tape: &mut Tape, main: Var, noise: Option<Var>) -> Result<Var> {
        match (self.noise_dim, noise) {
            (0, None) => Ok(main),
            (0, Some(_)) => Err(TensorError::ShapeMismatch {
                op: "noise",
                lhs: "noise-dim 0".into(),
                rhs: "noise batch provided".into(),
            }),
            (d, Some(n)) if n.cols == d && n.rows == main.rows => tape.concat_cols(main, n),
            (d, got) => Err(TensorError::ShapeMismatch {
                op: "noise",
                lhs: format!("noise-dim {d}"),
                rhs: match got {
                    Some(n) => format!("{}x{}", n.rows, n.cols),
                    None => "missing noise batch".into(),
                },
            }),
        }
    }

    /// Generator forward: x̂ rows from label rows (and noise when noise-dim > 0).
    pub fn generate(&self, tape: &mut Tape, z: Var, noise: Option<Var>, tracked: bool) -> Result<Var> {
        let input = self.with_noise(tape, z, noise)?;
        self.gen_x.forward(tape, input, self.slot_base(NetId::GenX), tracked)
    }

    /// Encoder forward: ẑ rows from input rows (and noise when noise-dim > 0).
    pub fn encode(&self, tape: &mut Tape, x: Var, noise: Option<Var>, tracked: bool) -> Result<Var> {
        let input = self.with_noise(tape, x, noise)?;
        self.enc_z.forward(tape, input, self.slot_base(NetId::EncZ), tracked)
    }

    fn disc_prob(&self, tape: &mut Tape, id: NetId, x: Var, z: Var, tracked: bool) -> Result<Var> {
        let input = tape.concat_cols(x, z)?;
        let out = self.net(id).forward(tape, input, self.slot_base(id), tracked)?;
        tape.clamp(out, RHO_EPS, 1.0 - RHO_EPS)
    }

    /// Source discriminator probability on (x, z) rows, clamped away from {0, 1}.
    pub fn disc_s_prob(&self, tape: &mut Tape, x: Var, z: Var, tracked: bool) -> Result<Var> {
        self.disc_s_guard()?;
        self.disc_prob(tape, NetId::DiscS, x, z, tracked)
    }

    /// Target discriminator probability on (x, z) rows, clamped away from {0, 1}.
    pub fn disc_t_prob(&self, tape: &mut Tape, x: Var, z: Var, tracked: bool) -> Result<Var> {
        self.disc_t_guard()?;
        self.disc_prob(tape, NetId::DiscT, x, z, tracked)
    }

    fn disc_s_guard(&self) -> Result<()> {
        Self::prob_guard(&self.disc_s)
    }

    fn disc_t_guard(&self) -> Result<()> {
        Self::prob_guard(&self.disc_t)
    }

    fn prob_guard(net: &Mlp) -> Result<()> {
        if net.head != Head::Sigmoid {
            return Err(TensorError::Domain {
                op: "disc_prob",
                what: "probability output requires a sigmoid discriminator head".into(),
            });
        }
        Ok(())
    }

    /// Unconstrained critic score on (x, z) rows (Wasserstein variant).
    pub fn critic_score(&self, tape: &mut Tape, id: NetId, x: Var, z: Var, tracked: bool) -> Result<Var> {
        let input = tape.concat_cols(x, z)?;
        self.net(id).forward(tape, input, self.slot_base(id), tracked)
    }
}

// ---- minibatch losses (literal sampled forms) ----

fn check_batches(op: &'static str, a: Var, b: Var) -> Result<()> {
    if a.rows != b.rows || a.cols != 1 || b.cols != 1 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: format!("{}x{}", a.rows, a.cols),
            rhs: format!("{}x{}", b.rows, b.cols),
        });
    }
    Ok(())
}

fn one_minus(tape: &mut Tape, v: Var) -> Result<Var> {
    let neg = tape.scale(v, -1.0)?;
    tape.add_const(neg, 1.0)
}

fn mean_log(tape: &mut Tape, v: Var) -> Result<Var> {
    let l = tape.log(v)?;
    tape.mean_all(l)
}

/// −(mean ln ρ_real + mean ln(1−ρ_generated)): the discriminator's objective in the
/// source game, minimized when real pairs score 1 and generated pairs score 0.
pub fn source_disc_loss(tape: &mut Tape, rho_real: Var, rho_gen: Var) -> Result<Var> {
    check_batches("source-disc-loss", rho_real, rho_gen)?;
    let a = mean_log(tape, rho_real)?;
    let om = one_minus(tape, rho_gen)?;
    let b = mean_log(tape, om)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Generator objective in the source game. Saturating: mean ln(1−ρ); non-saturating:
/// −mean ln ρ. Both are minimized by pushing ρ toward 1; the non-saturating form keeps a
/// strong gradient when the discriminator confidently rejects generated samples.
pub fn source_gen_loss(tape: &mut Tape, rho_gen: Var, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::StandardSaturating => {
            let om = one_minus(tape, rho_gen)?;
            mean_log(tape, om)
        }
        LossKind::NonSaturating => {
            let m = mean_log(tape, rho_gen)?;
            tape.scale(m, -1.0)
        }
        LossKind::WassersteinGp => Err(TensorError::Domain {
            op: "source-gen-loss",
            what: "Wasserstein training uses wasserstein_losses".into(),
        }),
    }
}

/// −(mean ln ρ_encoder + mean ln(1−ρ_generated)): the target-game discriminator's
/// objective; encoder pairs (x, ẑ) play the real slot, generated pairs (x̂, z) the fake.
pub fn target_disc_loss(tape: &mut Tape, rho_enc: Var, rho_gen: Var) -> Result<Var> {
    check_batches("target-disc-loss", rho_enc, rho_gen)?;
    let a = mean_log(tape, rho_enc)?;
    let om = one_minus(tape, rho_gen)?;
    let b = mean_log(tape, om)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// −(mean ln(1−ρ_encoder) + mean ln ρ_generated): the symmetric generator/encoder
/// objective of the target game; gradients flow to both the generator and the encoder.
pub fn target_gen_loss(tape: &mut Tape, rho_enc: Var, rho_gen: Var) -> Result<Var> {
    check_batches("target-gen-loss", rho_enc, rho_gen)?;
    let om = one_minus(tape, rho_enc)?;
    let a = mean_log(tape, om)?;
    let b = mean_log(tape, rho_gen)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Critic losses: disc = mean(fake) − mean(real) + gp_weight·gp_term; gen = −mean(fake).
pub fn wasserstein_losses(
    tape: &mut Tape,
    critic_real: Var,
    critic_fake: Var,
    gp_term: Var,
    gp_weight: f64,
) -> Result<(Var, Var)> {
    check_batches("wasserstein-losses", critic_real, critic_fake)?;
    let mf = tape.mean_all(critic_fake)?;
    let mr = tape.mean_all(critic_real)?;
    let diff = tape.sub(mf, mr)?;
    let pen = tape.scale(gp_term, gp_weight)?;
    let disc = tape.add(diff, pen)?;
    let gen = tape.scale(mf, -1.0)?;
    Ok((disc, gen))
}

/// −mean(critic_fake) alone, for generator updates that never score the real batch.
pub fn wasserstein_gen_loss(tape: &mut Tape, critic_fake: Var) -> Result<Var> {
    let mf = tape.mean_all(critic_fake)?;
    tape.scale(mf, -1.0)
}

/// mean over rows of (‖∇_input critic‖₂ − 1)², evaluated at per-row random interpolates
/// u = ε·real + (1−ε)·fake. The critic's input gradient is built symbolically on the tape
/// (relu masks enter as constants), so this term differentiates to the critic parameters
/// with the ordinary backward pass. A 1e-12 shift under the square root keeps the norm
/// differentiable at exactly-zero gradients.
pub fn gradient_penalty(
    tape: &mut Tape,
    critic: &Mlp,
    slot_base: usize,
    real: &Mat,
    fake: &Mat,
    eps: &[f64],
    tracked: bool,
) -> Result<Var> {
    if real.rows != fake.rows || real.cols != fake.cols || eps.len() != real.rows {
        return Err(TensorError::ShapeMismatch {
            op: "gradient-penalty",
            lhs: format!("real {}x{} / eps {}", real.rows, real.cols, eps.len()),
            rhs: format!("fake {}x{}", fake.rows, fake.cols),
        });
    }
    let mut interp = Vec::with_capacity(real.data.len());
    for i in 0..real.rows {
        let e = eps[i];
        for j in 0..real.cols {
            interp.push(e * real.data[i * real.cols + j] + (1.0 - e) * fake.data[i * fake.cols + j]);
        }
    }
    let u = tape.constant(interp, real.rows, real.cols)?;
    let trace = critic.forward_trace(tape, u, slot_base, tracked)?;
    let g = critic.input_gradient(tape, &trace)?;
    let g2 = tape.mul(g, g)?;
    let ones = tape.constant(vec![1.0; real.cols], real.cols, 1)?;
    let rowsum = tape.matmul(g2, ones)?;
    let shifted = tape.add_const(rowsum, 1e-12)?;
    let norm = tape.sqrt(shifted)?;
    let dm1 = tape.add_const(norm, -1.0)?;
    let sq = tape.mul(dm1, dm1)?;
    tape.mean_all(sq)
}

// ---- exact-expectation losses over categorical outputs ----

/// (1/rows)·Σ_ij w_ij · ln(t_ij), with t = probs or 1−probs.
fn weighted_mean_log(tape: &mut Tape, weights: Var, probs: Var, complement: bool) -> Result<Var> {
    if weights.rows != probs.rows || weights.cols != probs.cols {
        return Err(TensorError::ShapeMismatch {
            op: "weighted-mean-log",
            lhs: format!("{}x{}", weights.rows, weights.cols),
            rhs: format!("{}x{}", probs.rows, probs.cols),
        });
    }
    let t = if complement { one_minus(tape, probs)? } else { probs };
    let lt = tape.log(t)?;
    let w = tape.mul(weights, lt)?;
    let s = tape.sum_all(w)?;
    tape.scale(s, 1.0 / weights.rows as f64)
}

/// Source discriminator loss with the fake side's inner expectation taken exactly:
/// −(mean ln ρ_real + (1/M)·Σ_j Σ_k w_jk · ln(1−ρ_jk)), where row j of `rho_gen_grid`
/// holds the discriminator's scores at every output vertex paired with condition j, and
/// `weights` holds the generator's (detached) categorical probabilities.
pub fn source_disc_loss_expected(
    tape: &mut Tape,
    rho_real: Var,
    rho_gen_grid: Var,
    weights: Var,
) -> Result<Var> {
    let a = mean_log(tape, rho_real)?;
    let b = weighted_mean_log(tape, weights, rho_gen_grid, true)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Source generator loss with the expectation over its categorical output exact; the
/// gradient flows through `pi` (the generator's probabilities) while the grid of
/// discriminator scores is a constant.
pub fn source_gen_loss_expected(tape: &mut Tape, rho_gen_grid: Var, pi: Var, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::StandardSaturating => weighted_mean_log(tape, pi, rho_gen_grid, true),
        LossKind::NonSaturating => {
            let v = weighted_mean_log(tape, pi, rho_gen_grid, false)?;
            tape.scale(v, -1.0)
        }
        LossKind::WassersteinGp => Err(TensorError::Domain {
            op: "source-gen-loss-expected",
            what: "Wasserstein training uses wasserstein_losses".into(),
        }),
    }
}

/// Target discriminator loss with both sides' inner expectations exact: encoder-side
/// vertices score through ln ρ, generator-side vertices through ln(1−ρ).
pub fn target_disc_loss_expected(
    tape: &mut Tape,
    rho_enc_grid: Var,
    weights_enc: Var,
    rho_gen_grid: Var,
    weights_gen: Var,
) -> Result<Var> {
    let a = weighted_mean_log(tape, weights_enc, rho_enc_grid, false)?;
    let b = weighted_mean_log(tape, weights_gen, rho_gen_grid, true)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Target generator/encoder loss with both inner expectations exact; gradients flow
/// through both probability tables (`pi_enc`, `pi_gen`), the score grids are constants.
pub fn target_gen_loss_expected(
    tape: &mut Tape,
    rho_enc_grid: Var,
    pi_enc: Var,
    rho_gen_grid: Var,
    pi_gen: Var,
) -> Result<Var> {
    let a = weighted_mean_log(tape, pi_enc, rho_enc_grid, true)?;
    let b = weighted_mean_log(tape, pi_gen, rho_gen_grid, false)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Pair every condition row with every one-hot vertex of a `k`-way output domain:
/// block row j·k + i of the result is (one-hot i, condition j). Feeding these through a
/// discriminator and reshaping to [M × k] yields the score grids the exact-expectation
/// losses consume.
pub fn vertex_inputs(k: usize, cond: &Mat) -> (Mat, Mat) {
    let m = cond.rows;
    let mut verts = vec![0.0; m * k * k];
    let mut conds = Vec::with_capacity(m * k * cond.cols);
    for j in 0..m {
        for i in 0..k {
            verts[(j * k + i) * k + i] = 1.0;
            conds.extend_from_slice(cond.row(j));
        }
    }
    (Mat::new(verts, m * k, k), Mat::new(conds, m * k, cond.cols))
}
