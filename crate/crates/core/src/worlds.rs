//! Synthetic problem instances with closed-form distributions.
//!
//! A world owns four distributions: the source joint over (input, label), the source label
//! marginal, the target label prior, and the target input marginal. In a *consistent*
//! world the target input marginal is always derived as Σ_z p(x|z)·prior(z), which is the
//! exact condition for the two adversarial games to share an optimum; a separate
//! constructor accepts an explicitly declared (possibly contradictory) marginal for
//! negative tests and degenerate fixtures.
//!
//! Two instantiations are provided: a finite [`DiscreteWorld`] given by a probability
//! table, and a [`LinearGaussianWorld`] where the input is an affine function of a
//! Gaussian label plus Gaussian noise, so every density and posterior is closed-form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededSampler;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{what}: expected {expected}, got {got}")]
    BadShape { what: &'static str, expected: String, got: String },
    #[error("{what} has a negative entry ({value})")]
    NegativeEntry { what: &'static str, value: f64 },
    #[error("{what} sums to {sum}, not 1")]
    NotNormalized { what: &'static str, sum: f64 },
    #[error("{what} has zero mass at index {index}")]
    ZeroMass { what: &'static str, index: usize },
    #[error("{what} must be positive, got {value}")]
    NotPositive { what: &'static str, value: f64 },
    #[error("{what} is not finite")]
    NotFinite { what: &'static str },
    #[error("query out of domain: {what}")]
    OutOfDomain { what: String },
    #[error("world file: {0}")]
    Parse(String),
    #[error("declared target input marginal is inconsistent with the joint and prior; row masses {row_masses:?} (max residual {max_residual})")]
    Inconsistent { row_masses: Vec<f64>, max_residual: f64 },
}

type Result<T> = std::result::Result<T, WorldError>;

/// Dense row-major matrix used for sample batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Mat {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { data, rows, cols }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// One minibatch drawn from a world stream; components absent from the stream are `None`.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub x: Option<Mat>,
    pub z: Option<Mat>,
}

/// The four sampling streams a world exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// (x, z) ~ source joint
    SourceJoint,
    /// z ~ source label marginal
    SourceLabel,
    /// x ~ target input marginal
    TargetInput,
    /// z ~ target label prior
    TargetLabelPrior,
}

fn validate_distribution(what: &'static str, v: &[f64]) -> Result<()> {
    for &e in v {
        if !e.is_finite() {
            return Err(WorldError::NotFinite { what });
        }
        if e < 0.0 {
            return Err(WorldError::NegativeEntry { what, value: e });
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(WorldError::NotNormalized { what, sum });
    }
    Ok(())
}

fn one_hot(i: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

// ---- discrete ----

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWorld {
    x_arity: usize,
    z_arity: usize,
    /// row-major p(x, z), x indexes rows
    joint: Vec<f64>,
    target_label_prior: Vec<f64>,
    target_input_marginal: Vec<f64>,
    source_label_marginal: Vec<f64>,
}

impl DiscreteWorld {
    /// Build a world whose target input marginal is derived from the joint and the prior,
    /// so the two games' optima coexist by construction.
    pub fn consistent(joint: Vec<Vec<f64>>, target_label_prior: Vec<f64>) -> Result<Self> {
        let w = Self::assemble(joint, target_label_prior, None)?;
        for (i, &m) in w.source_label_marginal.iter().enumerate() {
            if m == 0.0 {
                return Err(WorldError::ZeroMass { what: "source label marginal", index: i });
            }
        }
        for (i, &m) in w.target_input_marginal.iter().enumerate() {
            if m == 0.0 {
                return Err(WorldError::ZeroMass { what: "target input marginal", index: i });
            }
        }
        Ok(w)
    }

    /// Build a world with an explicitly declared target input marginal, bypassing the
    /// consistency derivation. Only for negative tests and degenerate sampling fixtures;
    /// the declared marginal must still be a distribution.
    pub fn with_declared_marginal(
        joint: Vec<Vec<f64>>,
        target_label_prior: Vec<f64>,
        target_input_marginal: Vec<f64>,
    ) -> Result<Self> {
        Self::assemble(joint, target_label_prior, Some(target_input_marginal))
    }

    fn assemble(
        joint: Vec<Vec<f64>>,
        target_label_prior: Vec<f64>,
        declared_marginal: Option<Vec<f64>>,
    ) -> Result<Self> {
        let x_arity = joint.len();
        if x_arity < 2 {
            return Err(WorldError::BadShape {
                what: "joint-source",
                expected: "at least 2 rows".into(),
                got: format!("{x_arity}"),
            });
        }
        let z_arity = joint[0].len();
        if z_arity < 2 {
            return Err(WorldError::BadShape {
                what: "joint-source",
                expected: "at least 2 columns".into(),
                got: format!("{z_arity}"),
            });
        }
        for row in &joint {
            if row.len() != z_arity {
                return Err(WorldError::BadShape {
                    what: "joint-source",
                    expected: format!("{z_arity} columns per row"),
                    got: format!("{}", row.len()),
                });
            }
        }
        let flat: Vec<f64> = joint.into_iter().flatten().collect();
        validate_distribution("joint-source", &flat)?;
        if target_label_prior.len() != z_arity {
            return Err(WorldError::BadShape {
                what: "target-label-prior",
                expected: format!("length {z_arity}"),
                got: format!("{}", target_label_prior.len()),
            });
        }
        validate_distribution("target-label-prior", &target_label_prior)?;

        let mut source_label_marginal = vec![0.0; z_arity];
        for x in 0..x_arity {
            for z in 0..z_arity {
                source_label_marginal[z] += flat[x * z_arity + z];
            }
        }

        let target_input_marginal = match declared_marginal {
            Some(m) => {
                if m.len() != x_arity {
                    return Err(WorldError::BadShape {
                        what: "target-input-marginal",
                        expected: format!("length {x_arity}"),
                        got: format!("{}", m.len()),
                    });
                }
                validate_distribution("target-input-marginal", &m)?;
                m
            }
            None => {
                // p_t(x) = Σ_z p(x|z)·prior(z); requires every label to have source mass
                let mut pt = vec![0.0; x_arity];
                for x in 0..x_arity {
                    for z in 0..z_arity {
                        let pz = source_label_marginal[z];
                        if pz == 0.0 {
                            return Err(WorldError::ZeroMass { what: "source label marginal", index: z });
                        }
                        pt[x] += flat[x * z_arity + z] / pz * target_label_prior[z];
                    }
                }
                pt
            }
        };

        Ok(Self {
            x_arity,
            z_arity,
            joint: flat,
            target_label_prior,
            target_input_marginal,
            source_label_marginal,
        })
    }

    pub fn x_arity(&self) -> usize {
        self.x_arity
    }

    pub fn z_arity(&self) -> usize {
        self.z_arity
    }

    /// p(x, z) as a table lookup.
    pub fn joint(&self, x: usize, z: usize) -> f64 {
        self.joint[x * self.z_arity + z]
    }

    pub fn source_label_marginal(&self) -> &[f64] {
        &self.source_label_marginal
    }

    pub fn source_input_marginal(&self) -> Vec<f64> {
        (0..self.x_arity)
            .map(|x| (0..self.z_arity).map(|z| self.joint(x, z)).sum())
            .collect()
    }

    pub fn target_label_prior(&self) -> &[f64] {
        &self.target_label_prior
    }

    pub fn target_input_marginal(&self) -> &[f64] {
        &self.target_input_marginal
    }

    /// The marginal a consistent world would carry: Σ_z p(x|z)·prior(z).
    pub fn derived_input_marginal(&self) -> Result<Vec<f64>> {
        let mut pt = vec![0.0; self.x_arity];
        for x in 0..self.x_arity {
            for z in 0..self.z_arity {
                let pz = self.source_label_marginal[z];
                if pz == 0.0 {
                    return Err(WorldError::ZeroMass { what: "source label marginal", index: z });
                }
                pt[x] += self.joint(x, z) / pz * self.target_label_prior[z];
            }
        }
        Ok(pt)
    }

    /// Mass of each optimal-encoder row, Σ_z p(x,z)·prior(z)/(p(z)·p_t(x)); exactly 1 for
    /// every x iff the declared marginal matches the derived one.
    pub fn posterior_row_masses(&self) -> Result<Vec<f64>> {
        let derived = self.derived_input_marginal()?;
        Ok(derived
            .iter()
            .zip(&self.target_input_marginal)
            .map(|(d, m)| d / m)
            .collect())
    }

    /// Error (carrying per-row masses) unless the declared target marginal agrees with the
    /// derived one to 1e-10 per row.
    pub fn check_consistent(&self) -> Result<()> {
        let masses = self.posterior_row_masses()?;
        let max_residual = masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
        if max_residual > 1e-10 {
            return Err(WorldError::Inconsistent { row_masses: masses, max_residual });
        }
        Ok(())
    }

    /// p(x|z) for a fixed z, as a length-|X| vector.
    pub fn source_conditional_given_label(&self, z: usize) -> Result<Vec<f64>> {
        let pz = self.source_label_marginal[z];
        if pz == 0.0 {
            return Err(WorldError::ZeroMass { what: "source label marginal", index: z });
        }
        Ok((0..self.x_arity).map(|x| self.joint(x, z) / pz).collect())
    }

    fn sample(&self, which: StreamKind, n: usize, rng: &mut SeededSampler) -> Batch {
        match which {
            StreamKind::SourceJoint => {
                let mut xs = Vec::with_capacity(n * self.x_arity);
                let mut zs = Vec::with_capacity(n * self.z_arity);
                for _ in 0..n {
                    let idx = rng.categorical(&self.joint);
                    let (x, z) = (idx / self.z_arity, idx % self.z_arity);
                    xs.extend(one_hot(x, self.x_arity));
                    zs.extend(one_hot(z, self.z_arity));
                }
                Batch {
                    x: Some(Mat::new(xs, n, self.x_arity)),
                    z: Some(Mat::new(zs, n, self.z_arity)),
                }
            }
            StreamKind::SourceLabel => Batch {
                x: None,
                z: Some(Self::categorical_one_hot(&self.source_label_marginal, n, rng)),
            },
            StreamKind::TargetInput => Batch {
                x: Some(Self::categorical_one_hot(&self.target_input_marginal, n, rng)),
                z: None,
            },
            StreamKind::TargetLabelPrior => Batch {
                x: None,
                z: Some(Self::categorical_one_hot(&self.target_label_prior, n, rng)),
            },
        }
    }

    fn categorical_one_hot(weights: &[f64], n: usize, rng: &mut SeededSampler) -> Mat {
        let k = weights.len();
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            data.extend(one_hot(rng.categorical(weights), k));
        }
        Mat::new(data, n, k)
    }
}

// ---- linear-Gaussian ----

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianWorld {
    pub a: f64,
    pub sigma: f64,
    pub source_label_mean: f64,
    pub source_label_std: f64,
    pub target_label_mean: f64,
    pub target_label_std: f64,
}

pub fn gaussian_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let d = (x - mean) / std;
    (-0.5 * d * d).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

impl LinearGaussianWorld {
    pub fn new(
        a: f64,
        sigma: f64,
        source_label_mean: f64,
        source_label_std: f64,
        target_label_mean: f64,
        target_label_std: f64,
    ) -> Result<Self> {
        for (what, v) in [
            ("a", a),
            ("sigma", sigma),
            ("source-label-mean", source_label_mean),
            ("source-label-std", source_label_std),
            ("target-label-mean", target_label_mean),
            ("target-label-std", target_label_std),
        ] {
            if !v.is_finite() {
                return Err(WorldError::NotFinite { what });
            }
        }
        for (what, v) in [
            ("sigma", sigma),
            ("source-label-std", source_label_std),
            ("target-label-std", target_label_std),
        ] {
            if v <= 0.0 {
                return Err(WorldError::NotPositive { what, value: v });
            }
        }
        Ok(Self { a, sigma, source_label_mean, source_label_std, target_label_mean, target_label_std })
    }

    pub fn target_input_mean(&self) -> f64 {
        self.a * self.target_label_mean
    }

    pub fn target_input_var(&self) -> f64 {
        self.a * self.a * self.target_label_std * self.target_label_std + self.sigma * self.sigma
    }

    pub fn source_label_density(&self, z: f64) -> f64 {
        gaussian_pdf(z, self.source_label_mean, self.source_label_std)
    }

    pub fn target_label_density(&self, z: f64) -> f64 {
        gaussian_pdf(z, self.target_label_mean, self.target_label_std)
    }

    pub fn conditional_input_density(&self, x: f64, z: f64) -> f64 {
        gaussian_pdf(x, self.a * z, self.sigma)
    }

    pub fn joint_density(&self, x: f64, z: f64) -> f64 {
        self.source_label_density(z) * self.conditional_input_density(x, z)
    }

    pub fn target_input_density(&self, x: f64) -> f64 {
        gaussian_pdf(x, self.target_input_mean(), self.target_input_var().sqrt())
    }

    fn sample(&self, which: StreamKind, n: usize, rng: &mut SeededSampler) -> Batch {
        let col = |v: Vec<f64>| Mat::new(v, n, 1);
        match which {
            StreamKind::SourceJoint => {
                let mut xs = Vec::with_capacity(n);
                let mut zs = Vec::with_capacity(n);
                for _ in 0..n {
                    let z = self.source_label_mean + self.source_label_std * rng.gaussian();
                    let x = self.a * z + self.sigma * rng.gaussian();
                    zs.push(z);
                    xs.push(x);
                }
                Batch { x: Some(col(xs)), z: Some(col(zs)) }
            }
            StreamKind::SourceLabel => Batch {
                x: None,
                z: Some(col(
                    (0..n)
                        .map(|_| self.source_label_mean + self.source_label_std * rng.gaussian())
                        .collect(),
                )),
            },
            StreamKind::TargetInput => {
                // the marginal is Gaussian in closed form; one draw per sample
                let std = self.target_input_var().sqrt();
                Batch {
                    x: Some(col(
                        (0..n).map(|_| self.target_input_mean() + std * rng.gaussian()).collect(),
                    )),
                    z: None,
                }
            }
            StreamKind::TargetLabelPrior => Batch {
                x: None,
                z: Some(col(
                    (0..n)
                        .map(|_| self.target_label_mean + self.target_label_std * rng.gaussian())
                        .collect(),
                )),
            },
        }
    }
}

// ---- unified world ----

#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Discrete(DiscreteWorld),
    LinearGaussian(LinearGaussianWorld),
}

/// Exact densities of the four distributions at one domain point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Densities {
    pub joint_source: f64,
    pub source_label: f64,
    pub target_input: f64,
    pub target_label: f64,
}

/// A point of a world's domain: table indices or reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Discrete { x: usize, z: usize },
    Continuous { x: f64, z: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum WorldSpec {
    #[serde(rename_all = "kebab-case")]
    Discrete {
        x_arity: usize,
        z_arity: usize,
        joint_source: Vec<Vec<f64>>,
        target_label_prior: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_input_marginal: Option<Vec<f64>>,
    },
    #[serde(rename_all = "kebab-case")]
    LinearGaussian {
        a: f64,
        sigma: f64,
        source_label_mean: f64,
        source_label_std: f64,
        target_label_mean: f64,
        target_label_std: f64,
    },
}

impl World {
    /// Draw `n` i.i.d. samples from the named stream. Discrete labels/inputs are one-hot
    /// rows; linear-Gaussian components are single-column scalars.
    pub fn sample(&self, which: StreamKind, n: usize, rng: &mut SeededSampler) -> Batch {
        match self {
            World::Discrete(w) => w.sample(which, n, rng),
            World::LinearGaussian(w) => w.sample(which, n, rng),
        }
    }

    pub fn exact_densities(&self, at: Point) -> Result<Densities> {
        match (self, at) {
            (World::Discrete(w), Point::Discrete { x, z }) => {
                if x >= w.x_arity() || z >= w.z_arity() {
                    return Err(WorldError::OutOfDomain {
                        what: format!(
                            "index (x={x}, z={z}) outside {}x{} table",
                            w.x_arity(),
                            w.z_arity()
                        ),
                    });
                }
                Ok(Densities {
                    joint_source: w.joint(x, z),
                    source_label: w.source_label_marginal()[z],
                    target_input: w.target_input_marginal()[x],
                    target_label: w.target_label_prior()[z],
                })
            }
            (World::LinearGaussian(w), Point::Continuous { x, z }) => Ok(Densities {
                joint_source: w.joint_density(x, z),
                source_label: w.source_label_density(z),
                target_input: w.target_input_density(x),
                target_label: w.target_label_density(z),
            }),
            _ => Err(WorldError::OutOfDomain {
                what: "point kind does not match world kind".into(),
            }),
        }
    }

    /// Width of input vectors as fed to networks.
    pub fn x_dim(&self) -> usize {
        match self {
            World::Discrete(w) => w.x_arity(),
            World::LinearGaussian(_) => 1,
        }
    }

    /// Width of label vectors as fed to networks.
    pub fn z_dim(&self) -> usize {
        match self {
            World::Discrete(w) => w.z_arity(),
            World::LinearGaussian(_) => 1,
        }
    }

    pub fn from_json(s: &str) -> Result<World> {
        let spec: WorldSpec = serde_json::from_str(s).map_err(|e| WorldError::Parse(e.to_string()))?;
        match spec {
            WorldSpec::Discrete { x_arity, z_arity, joint_source, target_label_prior, target_input_marginal } => {
                let w = match target_input_marginal {
                    Some(m) => DiscreteWorld::with_declared_marginal(joint_source, target_label_prior, m)?,
                    None => DiscreteWorld::consistent(joint_source, target_label_prior)?,
                };
                if w.x_arity() != x_arity || w.z_arity() != z_arity {
                    return Err(WorldError::BadShape {
                        what: "x-arity/z-arity",
                        expected: format!("{}x{}", w.x_arity(), w.z_arity()),
                        got: format!("{x_arity}x{z_arity}"),
                    });
                }
                Ok(World::Discrete(w))
            }
            WorldSpec::LinearGaussian { a, sigma, source_label_mean, source_label_std, target_label_mean, target_label_std } => {
                Ok(World::LinearGaussian(LinearGaussianWorld::new(
                    a,
                    sigma,
                    source_label_mean,
                    source_label_std,
                    target_label_mean,
                    target_label_std,
                )?))
            }
        }
    }

    pub fn to_json(&self) -> String {
        let spec = match self {
            World::Discrete(w) => WorldSpec::Discrete {
                x_arity: w.x_arity(),
                z_arity: w.z_arity(),
                joint_source: (0..w.x_arity())
                    .map(|x| (0..w.z_arity()).map(|z| w.joint(x, z)).collect())
                    .collect(),
                target_label_prior: w.target_label_prior().to_vec(),
                target_input_marginal: Some(w.target_input_marginal().to_vec()),
            },
            World::LinearGaussian(w) => WorldSpec::LinearGaussian {
                a: w.a,
                sigma: w.sigma,
                source_label_mean: w.source_label_mean,
                source_label_std: w.source_label_std,
                target_label_mean: w.target_label_mean,
                target_label_std: w.target_label_std,
            },
        };
        serde_json::to_string_pretty(&spec).expect("world serialization")
    }

    /// Built-in 2×2 fixture with a shifted target prior: joint [[0.4,0.1],[0.1,0.4]],
    /// prior [0.2,0.8], hence source label marginal [0.5,0.5] and target marginal [0.32,0.68].
    pub fn demo_discrete() -> World {
        World::Discrete(
            DiscreteWorld::consistent(vec![vec![0.4, 0.1], vec![0.1, 0.4]], vec![0.2, 0.8])
                .expect("fixture is valid"),
        )
    }

    /// Built-in linear-Gaussian fixture: x = z + noise, source labels N(2,1), target labels
    /// N(0,1), observation noise std 1.
    pub fn demo_gaussian() -> World {
        World::LinearGaussian(
            LinearGaussianWorld::new(1.0, 1.0, 2.0, 1.0, 0.0, 1.0).expect("fixture is valid"),
        )
    }
}
