//! Closed-form and best-response ground truth for both adversarial games.
//!
//! For any consistent [`DiscreteWorld`] the joint optimum of the two games is known
//! exactly: the generator must equal the source conditional p(x|z), the encoder must equal
//! the posterior of the target label prior under that conditional, and the optimal
//! discriminator for densities (p, q) is p/(p+q). This module computes those closed forms,
//! the exact value of each game for tabular players, and runs the best-response dynamics
//! the convergence argument actually assumes — discriminators set analytically optimal at
//! every step, tabular generator/encoder descending the exact value functions on softmax
//! logits — so that gradient-trained networks can be judged against a machine-checked
//! optimum rather than against intuition.

use serde::Serialize;

use crate::worlds::{DiscreteWorld, LinearGaussianWorld, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("{op}: shape mismatch ({lhs} vs {rhs})")]
    ShapeMismatch { op: &'static str, lhs: usize, rhs: usize },
    #[error("optimal discriminator undefined: p + q = 0 at index {index}")]
    BothZero { index: usize },
    #[error("{what} has a negative entry")]
    Negative { what: &'static str },
    #[error("{what} sums to {sum}, not 1")]
    Unnormalized { what: &'static str, sum: f64 },
    #[error("policy row {row} sums to {sum}, not 1")]
    RowUnnormalized { row: usize, sum: f64 },
    #[error("best-response dynamics diverged at step {step} (non-finite value function)")]
    Diverged { step: u64, last: Option<Box<TrajectoryRow>> },
    #[error(transparent)]
    World(#[from] WorldError),
}

type Result<T> = std::result::Result<T, OracleError>;

/// Conditional probability table: one row per conditioning value, rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    rows: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|&e| e < 0.0) {
                return Err(OracleError::Negative { what: "policy row" });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(OracleError::RowUnnormalized { row: i, sum });
            }
        }
        Ok(Self { rows })
    }

    /// Row-wise softmax of a logit table; always lands on the simplex.
    pub fn from_logits(logits: &[Vec<f64>]) -> Self {
        let rows = logits.iter().map(|r| softmax(r)).collect();
        Self { rows }
    }

    pub fn uniform(n_rows: usize, n_cols: usize) -> Self {
        Self { rows: vec![vec![1.0 / n_cols as f64; n_cols]; n_rows] }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn max_abs_diff(&self, other: &TabularPolicy) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Elementwise ln with a 1e-12 floor, for initializing logits at a target table.
    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&e| e.max(1e-12).ln()).collect())
            .collect()
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

/// D*(u) = p(u) / (p(u) + q(u)), elementwise over any matching shape.
pub fn optimal_discriminator(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(OracleError::ShapeMismatch { op: "optimal-discriminator", lhs: p.len(), rhs: q.len() });
    }
    if p.iter().chain(q.iter()).any(|&v| v < 0.0) {
        return Err(OracleError::Negative { what: "density table" });
    }
    p.iter()
        .zip(q)
        .enumerate()
        .map(|(i, (&pv, &qv))| {
            if pv + qv == 0.0 {
                Err(OracleError::BothZero { index: i })
            } else {
                Ok(pv / (pv + qv))
            }
        })
        .collect()
}

/// The optimal encoder table: row x is p(x,z)·prior(z) / (p(z)·p_t(x)) over z. Errors on
/// inconsistent worlds, reporting every row's mass.
pub fn encoder_optimum(world: &DiscreteWorld) -> Result<TabularPolicy> {
    world.check_consistent()?;
    let rows = (0..world.x_arity())
        .map(|x| {
            (0..world.z_arity())
                .map(|z| {
                    world.joint(x, z) * world.target_label_prior()[z]
                        / (world.source_label_marginal()[z] * world.target_input_marginal()[x])
                })
                .collect()
        })
        .collect();
    TabularPolicy::from_rows(rows)
}

/// The optimal generator table: row z is the source conditional p(x|z) over x.
pub fn generator_optimum(world: &DiscreteWorld) -> Result<TabularPolicy> {
    let rows = (0..world.z_arity())
        .map(|z| world.source_conditional_given_label(z))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    TabularPolicy::from_rows(rows)
}

/// Conjugate-Gaussian posterior of the label given one input under the target label prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPosterior {
    pub mean: f64,
    pub variance: f64,
}

/// mean = (μ_t/τ_t² + a·x/σ²) / (1/τ_t² + a²/σ²); variance = 1 / (1/τ_t² + a²/σ²).
pub fn gaussian_encoder_optimum(world: &LinearGaussianWorld, x: f64) -> GaussianPosterior {
    let prior_prec = 1.0 / (world.target_label_std * world.target_label_std);
    let like_prec = world.a * world.a / (world.sigma * world.sigma);
    let precision = prior_prec + like_prec;
    let mean = (world.target_label_mean * prior_prec + world.a * x / (world.sigma * world.sigma)) / precision;
    GaussianPosterior { mean, variance: 1.0 / precision }
}

/// Jensen–Shannon divergence in natural log: ½KL(p‖m) + ½KL(q‖m), m = ½(p+q).
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(OracleError::ShapeMismatch { op: "jsd", lhs: p.len(), rhs: q.len() });
    }
    for (what, v) in [("first distribution", p), ("second distribution", q)] {
        if v.iter().any(|&e| e < 0.0) {
            return Err(OracleError::Negative { what });
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(OracleError::Unnormalized { what, sum });
        }
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&ai, &bi)| {
                if ai == 0.0 {
                    0.0
                } else {
                    let m = 0.5 * (ai + bi);
                    ai * (ai / m).ln()
                }
            })
            .sum()
    };
    Ok(0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p))
}

// ---- exact value functions for tabular players ----

/// Source-game value Σ_{x,z} p(x,z)·ln D(x,z) + Σ_{x,z} p(z)·G_x(x|z)·ln(1−D(x,z)).
/// `disc` is x-major ([x][z] flattened), `generator` rows are conditions z.
pub fn source_value(world: &DiscreteWorld, generator: &TabularPolicy, disc: &[f64]) -> f64 {
    let (nx, nz) = (world.x_arity(), world.z_arity());
    let mut v = 0.0;
    for x in 0..nx {
        for z in 0..nz {
            let d = disc[x * nz + z];
            v += world.joint(x, z) * d.ln();
            v += world.source_label_marginal()[z] * generator.row(z)[x] * (1.0 - d).ln();
        }
    }
    v
}

/// Target-game value Σ q_e·ln D + Σ q_g·ln(1−D) with q_e(x,z) = p_t(x)·G_z(z|x) and
/// q_g(x,z) = prior(z)·G_x(x|z).
pub fn target_value(
    world: &DiscreteWorld,
    generator: &TabularPolicy,
    encoder: &TabularPolicy,
    disc: &[f64],
) -> f64 {
    let (nx, nz) = (world.x_arity(), world.z_arity());
    let mut v = 0.0;
    for x in 0..nx {
        for z in 0..nz {
            let d = disc[x * nz + z];
            let qe = world.target_input_marginal()[x] * encoder.row(x)[z];
            let qg = world.target_label_prior()[z] * generator.row(z)[x];
            v += qe * d.ln() + qg * (1.0 - d).ln();
        }
    }
    v
}

/// The generated source joint G_x(x|z)·p(z), x-major, for feeding the optimal discriminator.
fn source_fake_joint(world: &DiscreteWorld, generator: &TabularPolicy) -> Vec<f64> {
    let (nx, nz) = (world.x_arity(), world.z_arity());
    let mut t = vec![0.0; nx * nz];
    for x in 0..nx {
        for z in 0..nz {
            t[x * nz + z] = world.source_label_marginal()[z] * generator.row(z)[x];
        }
    }
    t
}

fn source_joint_table(world: &DiscreteWorld) -> Vec<f64> {
    let (nx, nz) = (world.x_arity(), world.z_arity());
    (0..nx * nz).map(|i| world.joint(i / nz, i % nz)).collect()
}

fn target_pair_tables(
    world: &DiscreteWorld,
    generator: &TabularPolicy,
    encoder: &TabularPolicy,
) -> (Vec<f64>, Vec<f64>) {
    let (nx, nz) = (world.x_arity(), world.z_arity());
    let mut qe = vec![0.0; nx * nz];
    let mut qg = vec![0.0; nx * nz];
    for x in 0..nx {
        for z in 0..nz {
            qe[x * nz + z] = world.target_input_marginal()[x] * encoder.row(x)[z];
            qg[x * nz + z] = world.target_label_prior()[z] * generator.row(z)[x];
        }
    }
    (qe, qg)
}

/// softmax-chain gradient for one row: g = G ⊙ (c − Σ G⊙c).
fn softmax_row_grad(g_row: &[f64], c_row: &[f64], out: &mut [f64]) {
    let dot: f64 = g_row.iter().zip(c_row).map(|(g, c)| g * c).sum();
    for ((o, g), c) in out.iter_mut().zip(g_row).zip(c_row) {
        *o = g * (c - dot);
    }
}

// ---- best-response trainer ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularInit {
    /// zero logits: uniform rows
    Uniform,
    /// logits at ln(closed-form optimum): stationarity probe
    AtOptimum,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrajectoryRow {
    pub step: u64,
    pub value_source: f64,
    pub value_target: f64,
    pub encoder_max_abs_err: f64,
    pub generator_max_abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct TabularRun {
    /// rows z, columns x
    pub generator: TabularPolicy,
    /// rows x, columns z
    pub encoder: TabularPolicy,
    pub trajectory: Vec<TrajectoryRow>,
}

/// State of the convex-regime dynamics: logit tables for both tabular players.
struct Logits {
    gx: Vec<Vec<f64>>,
    gz: Vec<Vec<f64>>,
}

impl Logits {
    fn new(world: &DiscreteWorld, init: TabularInit) -> Result<Self> {
        match init {
            TabularInit::Uniform => Ok(Self {
                gx: vec![vec![0.0; world.x_arity()]; world.z_arity()],
                gz: vec![vec![0.0; world.z_arity()]; world.x_arity()],
            }),
            TabularInit::AtOptimum => Ok(Self {
                gx: generator_optimum(world)?.logits(),
                gz: encoder_optimum(world)?.logits(),
            }),
        }
    }
}

/// Alternating best-response dynamics: each step re-solves both discriminators exactly,
/// records both value functions, and descends the exact values on the players' logits
/// (generator in the source game first, then generator and encoder in the target game).
pub fn tabular_best_response_train(
    world: &DiscreteWorld,
    steps: u64,
    lr: f64,
    init: TabularInit,
) -> Result<TabularRun> {
    world.check_consistent()?;
    let enc_star = encoder_optimum(world)?;
    let gen_star = generator_optimum(world)?;
    let (nx, nz) = (world.x_arity(), world.z_arity());
    let joint = source_joint_table(world);
    let mut logits = Logits::new(world, init)?;
    let mut trajectory = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        // source phase: D_s exactly optimal, then G_x descends V_s
        let mut gx = TabularPolicy::from_logits(&logits.gx);
        let fake = source_fake_joint(world, &gx);
        let ds = optimal_discriminator(&joint, &fake)?;
        let value_source = source_value(world, &gx, &ds);
        let mut grad_row = vec![0.0; nx];
        for z in 0..nz {
            let c: Vec<f64> = (0..nx)
                .map(|x| world.source_label_marginal()[z] * (1.0 - ds[x * nz + z]).ln())
                .collect();
            softmax_row_grad(gx.row(z), &c, &mut grad_row);
            for (l, g) in logits.gx[z].iter_mut().zip(&grad_row) {
                *l -= lr * g;
            }
        }

        // target phase: D_t exactly optimal against the updated generator, then both
        // players descend V_t
        gx = TabularPolicy::from_logits(&logits.gx);
        let gz = TabularPolicy::from_logits(&logits.gz);
        let (qe, qg) = target_pair_tables(world, &gx, &gz);
        let dt = optimal_discriminator(&qe, &qg)?;
        let value_target = target_value(world, &gx, &gz, &dt);

        for z in 0..nz {
            let c: Vec<f64> = (0..nx)
                .map(|x| world.target_label_prior()[z] * (1.0 - dt[x * nz + z]).ln())
                .collect();
            softmax_row_grad(gx.row(z), &c, &mut grad_row);
            for (l, g) in logits.gx[z].iter_mut().zip(&grad_row) {
                *l -= lr * g;
            }
        }
        let mut grad_row_z = vec![0.0; nz];
        for x in 0..nx {
            let c: Vec<f64> = (0..nz)
                .map(|z| world.target_input_marginal()[x] * dt[x * nz + z].ln())
                .collect();
            softmax_row_grad(gz.row(x), &c, &mut grad_row_z);
            for (l, g) in logits.gz[x].iter_mut().zip(&grad_row_z) {
                *l -= lr * g;
            }
        }

        if !value_source.is_finite() || !value_target.is_finite() {
            let last = trajectory.pop().map(Box::new);
            return Err(OracleError::Diverged { step, last });
        }
        let gx_now = TabularPolicy::from_logits(&logits.gx);
        let gz_now = TabularPolicy::from_logits(&logits.gz);
        trajectory.push(TrajectoryRow {
            step,
            value_source,
            value_target,
            encoder_max_abs_err: gz_now.max_abs_diff(&enc_star),
            generator_max_abs_err: gx_now.max_abs_diff(&gen_star),
        });
    }

    Ok(TabularRun {
        generator: TabularPolicy::from_logits(&logits.gx),
        encoder: TabularPolicy::from_logits(&logits.gz),
        trajectory,
    })
}

/// Euclidean norm of all three logit gradients (source-game generator, target-game
/// generator, target-game encoder) at the given tables, with both discriminators exactly
/// optimal — the stationarity measure for the convex-regime dynamics.
pub fn best_response_gradient_norm(
    world: &DiscreteWorld,
    generator: &TabularPolicy,
    encoder: &TabularPolicy,
) -> Result<f64> {
    let (nx, nz) = (world.x_arity(), world.z_arity());
    let joint = source_joint_table(world);
    let fake = source_fake_joint(world, generator);
    let ds = optimal_discriminator(&joint, &fake)?;
    let (qe, qg) = target_pair_tables(world, generator, encoder);
    let dt = optimal_discriminator(&qe, &qg)?;

    let mut sq = 0.0;
    let mut grad_row = vec![0.0; nx];
    for z in 0..nz {
        let cs: Vec<f64> = (0..nx)
            .map(|x| world.source_label_marginal()[z] * (1.0 - ds[x * nz + z]).ln())
            .collect();
        softmax_row_grad(generator.row(z), &cs, &mut grad_row);
        sq += grad_row.iter().map(|g| g * g).sum::<f64>();
        let ct: Vec<f64> = (0..nx)
            .map(|x| world.target_label_prior()[z] * (1.0 - dt[x * nz + z]).ln())
            .collect();
        softmax_row_grad(generator.row(z), &ct, &mut grad_row);
        sq += grad_row.iter().map(|g| g * g).sum::<f64>();
    }
    let mut grad_row_z = vec![0.0; nz];
    for x in 0..nx {
        let c: Vec<f64> = (0..nz)
            .map(|z| world.target_input_marginal()[x] * dt[x * nz + z].ln())
            .collect();
        softmax_row_grad(encoder.row(x), &c, &mut grad_row_z);
        sq += grad_row_z.iter().map(|g| g * g).sum::<f64>();
    }
    Ok(sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededSampler;
    use crate::worlds::World;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn demo_world() -> DiscreteWorld {
        let World::Discrete(w) = World::demo_discrete() else { unreachable!() };
        w
    }

    fn random_world(rng: &mut SeededSampler, nx: usize, nz: usize) -> DiscreteWorld {
        let raw: Vec<f64> = (0..nx * nz).map(|_| rng.uniform_in(0.05, 1.0)).collect();
        let s: f64 = raw.iter().sum();
        let joint: Vec<Vec<f64>> = (0..nx)
            .map(|x| (0..nz).map(|z| raw[x * nz + z] / s).collect())
            .collect();
        let praw: Vec<f64> = (0..nz).map(|_| rng.uniform_in(0.05, 1.0)).collect();
        let ps: f64 = praw.iter().sum();
        let prior: Vec<f64> = praw.iter().map(|p| p / ps).collect();
        DiscreteWorld::consistent(joint, prior).unwrap()
    }

    #[test]
    fn optimal_discriminator_closed_forms() {
        let half = optimal_discriminator(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        for d in half {
            approx(d, 0.5, 0.0);
        }
        assert_eq!(optimal_discriminator(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        let d = optimal_discriminator(&[0.75, 0.25], &[0.25, 0.75]).unwrap();
        approx(d[0], 0.75, 1e-15);
        approx(d[1], 0.25, 1e-15);
        assert!(matches!(
            optimal_discriminator(&[1.0, 0.0], &[1.0, 0.0]),
            Err(OracleError::BothZero { index: 1 })
        ));
    }

    #[test]
    fn encoder_optimum_on_demo_world() {
        let enc = encoder_optimum(&demo_world()).unwrap();
        approx(enc.row(0)[0], 0.5, 1e-15);
        approx(enc.row(0)[1], 0.5, 1e-15);
        approx(enc.row(1)[0], 1.0 / 17.0, 1e-15);
        approx(enc.row(1)[1], 16.0 / 17.0, 1e-15);
    }

    #[test]
    fn matching_prior_reduces_to_bayes_posterior() {
        let joint = vec![vec![0.5, 0.2], vec![0.1, 0.2]];
        let w = DiscreteWorld::consistent(joint.clone(), vec![0.6, 0.4]).unwrap();
        let enc = encoder_optimum(&w).unwrap();
        for x in 0..2 {
            let px: f64 = joint[x].iter().sum();
            for z in 0..2 {
                approx(enc.row(x)[z], joint[x][z] / px, 1e-14);
            }
        }
    }

    #[test]
    fn inconsistent_world_reports_row_masses() {
        let w = DiscreteWorld::with_declared_marginal(
            vec![vec![0.4, 0.1], vec![0.1, 0.4]],
            vec![0.2, 0.8],
            vec![0.5, 0.5],
        )
        .unwrap();
        let err = encoder_optimum(&w).unwrap_err();
        match err {
            OracleError::World(WorldError::Inconsistent { row_masses, .. }) => {
                approx(row_masses[0], 0.64, 1e-12);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn generator_optimum_closed_forms() {
        let gen = generator_optimum(&demo_world()).unwrap();
        approx(gen.row(0)[0], 0.8, 1e-15);
        approx(gen.row(0)[1], 0.2, 1e-15);

        let uni = DiscreteWorld::consistent(vec![vec![0.25; 2]; 2], vec![0.3, 0.7]).unwrap();
        let g = generator_optimum(&uni).unwrap();
        for z in 0..2 {
            approx(g.row(z)[0], 0.5, 1e-15);
        }

        let perm = DiscreteWorld::consistent(
            vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            vec![0.4, 0.6],
        )
        .unwrap();
        let g = generator_optimum(&perm).unwrap();
        assert_eq!(g.row(0), &[0.0, 1.0]);
        assert_eq!(g.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn gaussian_posterior_closed_forms() {
        let World::LinearGaussian(w) = World::demo_gaussian() else { unreachable!() };
        let p = gaussian_encoder_optimum(&w, 2.0);
        approx(p.mean, 1.0, 1e-15);
        approx(p.variance, 0.5, 1e-15);

        let tight = LinearGaussianWorld::new(1.0, 1.0, 2.0, 1.0, -3.0, 1e-9).unwrap();
        let p = gaussian_encoder_optimum(&tight, 50.0);
        approx(p.mean, -3.0, 1e-6);

        let flat = LinearGaussianWorld::new(0.0, 1.0, 2.0, 1.0, 0.7, 1.3).unwrap();
        let p = gaussian_encoder_optimum(&flat, 123.0);
        approx(p.mean, 0.7, 1e-15);
        approx(p.variance, 1.3 * 1.3, 1e-15);
    }

    #[test]
    fn jsd_closed_forms() {
        approx(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0, 0.0);
        approx(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), std::f64::consts::LN_2, 1e-15);
        // ½KL + ½KL with m = [0.625, 0.375], evaluated symbolically
        let expect = 0.5 * (0.5 * (0.5f64 / 0.625).ln() + 0.5 * (0.5f64 / 0.375).ln())
            + 0.5 * (0.75 * (0.75f64 / 0.625).ln() + 0.25 * (0.25f64 / 0.375).ln());
        let got = jsd(&[0.5, 0.5], &[0.75, 0.25]).unwrap();
        approx(got, expect, 1e-15);
        approx(got, 0.033822075575, 1e-9);
        assert!(matches!(jsd(&[0.5, 0.4], &[0.5, 0.5]), Err(OracleError::Unnormalized { .. })));
    }

    #[test]
    fn value_identities_at_matched_distributions() {
        let w = demo_world();
        let gen = generator_optimum(&w).unwrap();
        let enc = encoder_optimum(&w).unwrap();
        let two_ln2 = 2.0 * std::f64::consts::LN_2;

        let joint = source_joint_table(&w);
        let fake = source_fake_joint(&w, &gen);
        let ds = optimal_discriminator(&joint, &fake).unwrap();
        approx(source_value(&w, &gen, &ds), -two_ln2, 1e-9);

        let (qe, qg) = target_pair_tables(&w, &gen, &enc);
        let dt = optimal_discriminator(&qe, &qg).unwrap();
        approx(target_value(&w, &gen, &enc, &dt), -two_ln2, 1e-9);
    }

    #[test]
    fn source_value_at_optimal_disc_is_jsd_identity() {
        // V(G, D*) = −2 ln 2 + 2·JSD(real ‖ fake) — ties values, discriminators, and
        // divergence together on random worlds and random generator tables
        let mut rng = SeededSampler::new(314, 0);
        for _ in 0..25 {
            let nx = 2 + (rng.next_u64() % 3) as usize;
            let nz = 2 + (rng.next_u64() % 3) as usize;
            let w = random_world(&mut rng, nx, nz);
            let logits: Vec<Vec<f64>> =
                (0..nz).map(|_| (0..nx).map(|_| rng.gaussian()).collect()).collect();
            let gen = TabularPolicy::from_logits(&logits);
            let joint = source_joint_table(&w);
            let fake = source_fake_joint(&w, &gen);
            let ds = optimal_discriminator(&joint, &fake).unwrap();
            let v = source_value(&w, &gen, &ds);
            let d = jsd(&joint, &fake).unwrap();
            approx(v, -2.0 * std::f64::consts::LN_2 + 2.0 * d, 1e-12);
        }
    }

    #[test]
    fn encoder_optimum_matches_independent_bayes_path() {
        let mut rng = SeededSampler::new(2717, 0);
        for _ in 0..200 {
            let nx = 2 + (rng.next_u64() % 7) as usize;
            let nz = 2 + (rng.next_u64() % 7) as usize;
            let w = random_world(&mut rng, nx, nz);
            let enc = encoder_optimum(&w).unwrap();
            let gen = generator_optimum(&w).unwrap();
            // independent path: posterior ∝ likelihood(x|z) · prior(z)
            for x in 0..nx {
                let mut post: Vec<f64> = (0..nz)
                    .map(|z| gen.row(z)[x] * w.target_label_prior()[z])
                    .collect();
                let s: f64 = post.iter().sum();
                for p in &mut post {
                    *p /= s;
                }
                for z in 0..nz {
                    approx(enc.row(x)[z], post[z], 1e-12);
                }
            }
        }
    }

    #[test]
    fn optimum_is_stationary_for_best_response_dynamics() {
        let w = demo_world();
        let gen = generator_optimum(&w).unwrap();
        let enc = encoder_optimum(&w).unwrap();
        let norm = best_response_gradient_norm(&w, &gen, &enc).unwrap();
        assert!(norm < 1e-8, "gradient norm at optimum: {norm}");

        let run = tabular_best_response_train(&w, 50, 0.5, TabularInit::AtOptimum).unwrap();
        assert!(run.encoder.max_abs_diff(&enc) < 1e-9);
        assert!(run.generator.max_abs_diff(&gen) < 1e-9);
    }

    #[test]
    fn demo_world_converges_to_oracle_from_uniform() {
        let w = demo_world();
        let run = tabular_best_response_train(&w, 5000, 0.5, TabularInit::Uniform).unwrap();
        let enc_err = run.encoder.max_abs_diff(&encoder_optimum(&w).unwrap());
        let gen_err = run.generator.max_abs_diff(&generator_optimum(&w).unwrap());
        assert!(enc_err < 1e-3, "encoder err {enc_err}");
        assert!(gen_err < 1e-3, "generator err {gen_err}");

        // V_s recorded at the optimal discriminator is non-increasing in the convex regime
        let vs: Vec<f64> = run.trajectory.iter().map(|r| r.value_source).collect();
        for pair in vs.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "V_s increased: {} -> {}", pair[0], pair[1]);
        }
        approx(*vs.last().unwrap(), -2.0 * std::f64::consts::LN_2, 1e-9);
    }

    #[test]
    fn random_world_converges_to_oracle() {
        let mut rng = SeededSampler::new(424242, 0);
        let w = random_world(&mut rng, 4, 4);
        let run = tabular_best_response_train(&w, 5000, 0.5, TabularInit::Uniform).unwrap();
        let err = run.encoder.max_abs_diff(&encoder_optimum(&w).unwrap());
        assert!(err < 1e-3, "encoder err {err}");
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let w = demo_world();
        let run = tabular_best_response_train(&w, 0, 0.5, TabularInit::Uniform).unwrap();
        assert!(run.trajectory.is_empty());
        approx(run.encoder.row(0)[0], 0.5, 0.0);
        let expected = encoder_optimum(&w).unwrap();
        let init_dist = TabularPolicy::uniform(2, 2).max_abs_diff(&expected);
        approx(run.encoder.max_abs_diff(&expected), init_dist, 0.0);
    }
}
