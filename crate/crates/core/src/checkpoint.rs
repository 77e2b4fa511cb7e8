//! Parameter snapshots on disk.
//!
//! A checkpoint is a single JSON document carrying either a four-network bundle (an
//! architecture header plus one `{name, shape, data}` fragment per parameter tensor) or a
//! pair of tabular policies. Reals are written in decimal at round-trip precision, so a
//! save/load cycle reproduces every 64-bit value exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::{LossVariant, NetworkBundle, ALL_NETS};
use crate::nets::Head;
use crate::oracle::TabularPolicy;
use crate::rng::SeededSampler;

#[derive(Debug, Error)]
pub enum CheckpointError {
    /// the file parses but cannot be loaded into the expected model
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    /// the file is not a valid checkpoint document at all
    #[error("malformed checkpoint: {0}")]
    Malformed(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// One parameter tensor: row-major values plus their `[rows, cols]` shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Everything needed to rebuild the four-network bundle before loading fragments into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NeuralArch {
    pub x_dim: usize,
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    pub noise_dim: usize,
    /// softmax generator/encoder heads when true, linear otherwise
    pub discrete: bool,
    /// linear (critic) discriminator heads when true, sigmoid otherwise
    pub wasserstein: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Checkpoint {
    Neural { arch: NeuralArch, params: Vec<Fragment> },
    Tabular { generator: Vec<Vec<f64>>, encoder: Vec<Vec<f64>> },
}

/// A checkpoint loaded back into model form.
#[derive(Debug, Clone)]
pub enum Restored {
    Neural(NetworkBundle),
    Tabular { generator: TabularPolicy, encoder: TabularPolicy },
}

impl Checkpoint {
    pub fn of_bundle(bundle: &NetworkBundle) -> Checkpoint {
        let params = ALL_NETS
            .iter()
            .flat_map(|&id| bundle.net(id).params.iter())
            .map(|p| Fragment {
                name: p.name.clone(),
                shape: [p.rows, p.cols],
                data: p.data.clone(),
            })
            .collect();
        Checkpoint::Neural {
            arch: NeuralArch {
                x_dim: bundle.x_dim,
                z_dim: bundle.z_dim,
                hidden: bundle.gen_x.hidden.clone(),
                noise_dim: bundle.noise_dim,
                discrete: bundle.gen_x.head == Head::Softmax,
                wasserstein: bundle.disc_s.head == Head::Linear,
            },
            params,
        }
    }

    pub fn of_tables(generator: &TabularPolicy, encoder: &TabularPolicy) -> Checkpoint {
        Checkpoint::Tabular {
            generator: generator.rows().to_vec(),
            encoder: encoder.rows().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<Restored> {
        match self {
            Checkpoint::Neural { arch, params } => Ok(Restored::Neural(restore_bundle(arch, params)?)),
            Checkpoint::Tabular { generator, encoder } => {
                let badrow = |e| CheckpointError::Mismatch(format!("invalid policy table: {e}"));
                Ok(Restored::Tabular {
                    generator: TabularPolicy::from_rows(generator.clone()).map_err(badrow)?,
                    encoder: TabularPolicy::from_rows(encoder.clone()).map_err(badrow)?,
                })
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints always serialize")
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        Ok(serde_json::from_str(s)?)
    }
}

fn restore_bundle(arch: &NeuralArch, fragments: &[Fragment]) -> Result<NetworkBundle> {
    let variant = if arch.wasserstein {
        LossVariant::wasserstein(10.0)
    } else {
        LossVariant::non_saturating()
    };
    // fragment data overwrites every initial value, so any seed works here
    let mut rng = SeededSampler::new(0, 0);
    let mut bundle = NetworkBundle::new(
        arch.x_dim,
        arch.z_dim,
        &arch.hidden,
        arch.noise_dim,
        arch.discrete,
        variant,
        &mut rng,
    );
    let expected: usize = ALL_NETS.iter().map(|&id| bundle.net(id).params.len()).sum();
    if fragments.len() != expected {
        return Err(CheckpointError::Mismatch(format!(
            "expected {expected} parameter fragments, found {}",
            fragments.len()
        )));
    }
    let mut by_name: std::collections::HashMap<&str, &Fragment> =
        fragments.iter().map(|f| (f.name.as_str(), f)).collect();
    if by_name.len() != fragments.len() {
        return Err(CheckpointError::Mismatch("duplicate fragment names".into()));
    }
    for id in ALL_NETS {
        for p in &mut bundle.net_mut(id).params {
            let frag = by_name.remove(p.name.as_str()).ok_or_else(|| {
                CheckpointError::Mismatch(format!("missing parameter fragment `{}`", p.name))
            })?;
            if frag.shape != [p.rows, p.cols] {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter `{}` has shape {:?}, expected [{}, {}]",
                    p.name, frag.shape, p.rows, p.cols
                )));
            }
            if frag.data.len() != p.rows * p.cols {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter `{}` carries {} values for shape {:?}",
                    p.name,
                    frag.data.len(),
                    frag.shape
                )));
            }
            p.data.copy_from_slice(&frag.data);
        }
    }
    if let Some(name) = by_name.keys().next() {
        return Err(CheckpointError::Mismatch(format!("unknown parameter fragment `{name}`")));
    }
    Ok(bundle)
}
