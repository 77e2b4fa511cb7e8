//! Quantitative comparison of trained networks against closed-form optima, and the
//! per-round record the trainer logs.
//!
//! Every metric is a pure function of (parameter snapshot, world, seed): repeated
//! evaluation returns bit-identical values. Encoders with an input-noise channel are
//! summarized by their conditional mean, estimated from a fixed number of seeded draws.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::NetworkBundle;
use crate::oracle::{encoder_optimum, gaussian_encoder_optimum, OracleError, TabularPolicy};
use crate::rng::SeededSampler;
use crate::tensor::{Tape, TensorError};
use crate::worlds::{DiscreteWorld, LinearGaussianWorld, Mat};

/// Stream id reserved for evaluation-time noise draws (disjoint from training streams).
pub const EVAL_NOISE_STREAM: u64 = 10;

/// Number of noise draws used to estimate an encoder's conditional mean; the resulting
/// standard error is small against the tolerances the estimates are compared at.
pub const NOISE_DRAWS: usize = 256;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("distribution length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty evaluation grid")]
    EmptyGrid,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

type Result<T> = std::result::Result<T, MetricsError>;

/// ½ Σ |p_i − q_i|: total-variation distance between two distributions on the same
/// finite domain. Lies in [0, 1] for valid distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MetricsError::LengthMismatch(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Encoder conditional means (one row per input row), averaged over `NOISE_DRAWS` seeded
/// noise draws when the bundle has an input-noise channel, else a single forward pass.
fn averaged_encoder_rows(bundle: &NetworkBundle, inputs: &Mat, seed: u64) -> Result<Vec<Vec<f64>>> {
    let draws = if bundle.noise_dim == 0 { 1 } else { NOISE_DRAWS };
    let mut rng = SeededSampler::new(seed, EVAL_NOISE_STREAM);
    let rows = inputs.rows;
    let mut acc = vec![vec![0.0; bundle.z_dim]; rows];
    for _ in 0..draws {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.data.clone(), rows, inputs.cols)?;
        let noise = match bundle.noise_dim {
            0 => None,
            d => {
                let data: Vec<f64> = (0..rows * d).map(|_| rng.gaussian()).collect();
                Some(tape.constant(data, rows, d)?)
            }
        };
        let out = bundle.encode(&mut tape, x, noise, false)?;
        let vals = tape.value(out);
        for r in 0..rows {
            for c in 0..bundle.z_dim {
                acc[r][c] += vals[r * bundle.z_dim + c];
            }
        }
    }
    let inv = 1.0 / draws as f64;
    for row in &mut acc {
        for v in row {
            *v *= inv;
        }
    }
    Ok(acc)
}

/// The encoder's conditional label table on a discrete world: row x is the (noise-averaged)
/// softmax output at the one-hot input for x. Requires a distribution-valued encoder head.
pub fn encoder_table(bundle: &NetworkBundle, world: &DiscreteWorld, seed: u64) -> Result<TabularPolicy> {
    if bundle.enc_z.head != crate::nets::Head::Softmax {
        return Err(MetricsError::Tensor(TensorError::Domain {
            op: "encoder-table",
            what: "discrete-world evaluation requires a softmax encoder head".into(),
        }));
    }
    let k = world.x_arity();
    let mut eye = vec![0.0; k * k];
    for i in 0..k {
        eye[i * k + i] = 1.0;
    }
    let rows = averaged_encoder_rows(bundle, &Mat::new(eye, k, k), seed)?;
    Ok(TabularPolicy::from_rows(rows)?)
}

/// Worst-case conditional mismatch: max over inputs x of the total-variation distance
/// between the encoder's label distribution at x and the closed-form optimum's row.
pub fn encoder_tv(bundle: &NetworkBundle, world: &DiscreteWorld, seed: u64) -> Result<f64> {
    let learned = encoder_table(bundle, world, seed)?;
    table_tv(&learned, world)
}

/// [`encoder_tv`] for an encoder already in table form.
pub fn table_tv(learned: &TabularPolicy, world: &DiscreteWorld) -> Result<f64> {
    let oracle = encoder_optimum(world)?;
    let mut worst = 0.0f64;
    for x in 0..world.x_arity() {
        worst = worst.max(total_variation(learned.row(x), oracle.row(x))?);
    }
    Ok(worst)
}

/// Shift-vs-shortcut diagnostic for a discrete world.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapReport {
    /// x-averaged TV(learned, source posterior) − x-averaged TV(learned, shifted-prior
    /// optimum). Positive means the encoder sits closer to the prior-corrected posterior
    /// than to the source-game shortcut p_s(z|x).
    pub gap: f64,
    /// true when the shifted label prior equals the source label marginal, making the two
    /// reference posteriors coincide and the gap trivially zero
    pub degenerate: bool,
}

/// Measures whether the encoder matched the shifted-prior posterior rather than the source
/// posterior. Both reference tables are compared by TV per input row, averaged uniformly
/// over inputs (the average is a stabler diagnostic than the worst case).
pub fn encoder_tv_gap(bundle: &NetworkBundle, world: &DiscreteWorld, seed: u64) -> Result<GapReport> {
    let learned = encoder_table(bundle, world, seed)?;
    table_tv_gap(&learned, world)
}

/// [`encoder_tv_gap`] for an encoder already in table form.
pub fn table_tv_gap(learned: &TabularPolicy, world: &DiscreteWorld) -> Result<GapReport> {
    let shifted = encoder_optimum(world)?;
    let p_x = world.source_input_marginal();
    let degenerate =
        total_variation(world.target_label_prior(), world.source_label_marginal())? <= 1e-12;
    let mut tv_source = 0.0;
    let mut tv_shifted = 0.0;
    for x in 0..world.x_arity() {
        let source_row: Vec<f64> =
            (0..world.z_arity()).map(|z| world.joint(x, z) / p_x[x]).collect();
        tv_source += total_variation(learned.row(x), &source_row)?;
        tv_shifted += total_variation(learned.row(x), shifted.row(x))?;
    }
    let n = world.x_arity() as f64;
    Ok(GapReport { gap: (tv_source - tv_shifted) / n, degenerate })
}

/// Root-mean-square error between the encoder's conditional mean and the closed-form
/// posterior mean over a grid of input values.
pub fn encoder_rmse(
    bundle: &NetworkBundle,
    world: &LinearGaussianWorld,
    grid: &[f64],
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    let est = gaussian_encoder_means(bundle, grid, seed)?;
    let mut sq = 0.0;
    for (i, &x) in grid.iter().enumerate() {
        let oracle = gaussian_encoder_optimum(world, x);
        sq += (est[i] - oracle.mean).powi(2);
    }
    Ok((sq / grid.len() as f64).sqrt())
}

/// Continuous analogue of the tv gap: rmse of the encoder's mean against the *source*
/// posterior mean minus its rmse against the shifted-prior posterior mean, on a grid.
/// Positive means the encoder tracks the prior-corrected posterior.
pub fn encoder_rmse_gap(
    bundle: &NetworkBundle,
    world: &LinearGaussianWorld,
    grid: &[f64],
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    let est = gaussian_encoder_means(bundle, grid, seed)?;
    let mut sq_source = 0.0;
    let mut sq_shifted = 0.0;
    for (i, &x) in grid.iter().enumerate() {
        let shifted = gaussian_encoder_optimum(world, x).mean;
        let source = lg_posterior_mean(world, world.source_label_mean, world.source_label_std, x);
        sq_source += (est[i] - source).powi(2);
        sq_shifted += (est[i] - shifted).powi(2);
    }
    let n = grid.len() as f64;
    Ok((sq_source / n).sqrt() - (sq_shifted / n).sqrt())
}

/// Posterior mean of the label under prior N(mu, tau²) and observation x = a·z + noise:
/// (σ²·mu + a·τ²·x) / (σ² + a²·τ²).
fn lg_posterior_mean(world: &LinearGaussianWorld, mu: f64, tau: f64, x: f64) -> f64 {
    let s2 = world.sigma * world.sigma;
    let t2 = tau * tau;
    (s2 * mu + world.a * t2 * x) / (s2 + world.a * world.a * t2)
}

fn gaussian_encoder_means(bundle: &NetworkBundle, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    let inputs = Mat::new(grid.to_vec(), grid.len(), 1);
    let rows = averaged_encoder_rows(bundle, &inputs, seed)?;
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// One evaluation row of a training run. `wall_clock_ms` is carried for in-process
/// inspection but deliberately left out of the serialized form so that metric streams from
/// identical (config, seed) runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MetricRecord {
    pub round: u64,
    pub source_disc: f64,
    pub source_gen: f64,
    pub target_disc: f64,
    pub target_gen: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub encoder_tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub encoder_rmse: Option<f64>,
    pub label_shift_margin: f64,
    #[serde(skip_serializing, default)]
    pub wall_clock_ms: u64,
    pub seed: u64,
}

/// Serialize records as JSON Lines: one object per line, field order fixed.
pub fn write_jsonl<W: Write>(records: &[MetricRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSON Lines metric stream; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
