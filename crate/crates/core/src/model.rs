//! Jump-diffusion generators.
//!
//! A model is a set of reversible jump channel pairs (direction `nu`, forward
//! rate `R_l`, backward rate `R_-l` with direction `-nu`) plus an affine drift
//! `A(z) = A0 + A1 z` and a constant diffusion matrix `D`. The small-noise
//! parameter `epsilon` is not part of the model; it is supplied at sampling
//! time.
//!
//! [`ModelConfig`] is the serialized, unchecked form. [`GeneratorSpec`] is the
//! validated, immutable form every other module consumes.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type StateVector = Vec<f64>;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Rate law of a single channel direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateLaw {
    Constant { k: f64 },
    /// `k * prod_i z_i^order_i`, with `0^0 = 1`.
    MassAction { k: f64, order: Vec<u32> },
}

impl RateLaw {
    pub fn constant(k: f64) -> Self {
        RateLaw::Constant { k }
    }

    pub fn mass_action(k: f64, order: Vec<u32>) -> Self {
        RateLaw::MassAction { k, order }
    }

    pub fn k(&self) -> f64 {
        match self {
            RateLaw::Constant { k } | RateLaw::MassAction { k, .. } => *k,
        }
    }

    /// Evaluates the rate at `z`.
    ///
    /// Mass-action laws reject negative coordinates that carry a positive order.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        match self {
            RateLaw::Constant { k } => Ok(*k),
            RateLaw::MassAction { k, order } => {
                check_dim(order.len(), z.len())?;
                let mut r = *k;
                for (i, (&zi, &o)) in z.iter().zip(order).enumerate() {
                    if o == 0 {
                        continue;
                    }
                    if zi < 0.0 {
                        return Err(Error::Domain(format!(
                            "mass-action rate at negative coordinate z[{i}] = {zi}"
                        )));
                    }
                    r *= zi.powi(o as i32);
                }
                Ok(r)
            }
        }
    }

    /// Like [`RateLaw::evaluate`] but returns 0 instead of a domain error.
    /// Used for sampling, where a diffusing coordinate may dip below zero.
    pub fn propensity(&self, z: &[f64]) -> f64 {
        match self {
            RateLaw::Constant { k } => *k,
            RateLaw::MassAction { k, order } => {
                let mut r = *k;
                for (&zi, &o) in z.iter().zip(order) {
                    if o == 0 {
                        continue;
                    }
                    if zi <= 0.0 {
                        return 0.0;
                    }
                    r *= zi.powi(o as i32);
                }
                r
            }
        }
    }

    /// Adds `scale * dR/dz` to `out`.
    ///
    /// The mass-action derivative is computed termwise,
    /// `k * o_i z_i^(o_i - 1) * prod_{j != i} z_j^o_j`, so it stays finite at
    /// `z_i = 0`.
    pub fn add_gradient(&self, z: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        let RateLaw::MassAction { k, order } = self else {
            return Ok(());
        };
        check_dim(order.len(), z.len())?;
        if let Some(i) = z
            .iter()
            .zip(order)
            .position(|(&zi, &o)| o > 0 && zi < 0.0)
        {
            return Err(Error::Domain(format!(
                "mass-action gradient at negative coordinate z[{i}] = {}",
                z[i]
            )));
        }
        for i in 0..z.len() {
            let oi = order[i];
            if oi == 0 {
                continue;
            }
            let mut d = k * f64::from(oi) * z[i].powi(oi as i32 - 1);
            for (j, (&zj, &oj)) in z.iter().zip(order).enumerate() {
                if j != i && oj > 0 {
                    d *= zj.powi(oj as i32);
                }
            }
            out[i] += scale * d;
        }
        Ok(())
    }
}

/// One reversible pair of jump channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpChannelPair {
    pub nu: Vec<i32>,
    pub forward: RateLaw,
    pub backward: RateLaw,
}

impl JumpChannelPair {
    pub fn new(nu: Vec<i32>, forward: RateLaw, backward: RateLaw) -> Self {
        Self {
            nu,
            forward,
            backward,
        }
    }

    pub fn nu_dot(&self, y: &[f64]) -> f64 {
        self.nu
            .iter()
            .zip(y)
            .map(|(&n, &yi)| f64::from(n) * yi)
            .sum()
    }

    /// `(R_l(z), R_-l(z))`.
    pub fn rates(&self, z: &[f64]) -> Result<(f64, f64)> {
        Ok((self.forward.evaluate(z)?, self.backward.evaluate(z)?))
    }
}

/// Affine drift and constant diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub offset: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

impl DriftDiffusion {
    pub fn zero(n: usize) -> Self {
        Self {
            offset: DVector::zeros(n),
            matrix: DMatrix::zeros(n, n),
            diffusion: DMatrix::zeros(n, n),
        }
    }

    pub fn dimension(&self) -> usize {
        self.offset.len()
    }

    /// `A0 + A1 z`.
    pub fn drift(&self, z: &[f64]) -> Result<StateVector> {
        check_dim(self.dimension(), z.len())?;
        let mut out = vec![0.0; z.len()];
        self.drift_into(z, &mut out);
        Ok(out)
    }

    pub(crate) fn drift_into(&self, z: &[f64], out: &mut [f64]) {
        let n = z.len();
        for i in 0..n {
            let mut a = self.offset[i];
            for j in 0..n {
                a += self.matrix[(i, j)] * z[j];
            }
            out[i] = a;
        }
    }

    pub fn has_drift(&self) -> bool {
        self.offset.iter().chain(self.matrix.iter()).any(|&v| v != 0.0)
    }

    pub fn has_diffusion(&self) -> bool {
        self.diffusion.iter().any(|&v| v != 0.0)
    }

    /// `y^T D y`.
    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        let n = y.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += y[i] * self.diffusion[(i, j)] * y[j];
            }
        }
        s
    }

    /// `D y`.
    pub fn apply_diffusion(&self, y: &[f64]) -> StateVector {
        let n = y.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.diffusion[(i, j)] * y[j]).sum())
            .collect()
    }

    /// Lower-triangular `C` with `C C^T = D`.
    ///
    /// Semidefinite Cholesky: columns whose pivot falls below tolerance are
    /// zeroed, so singular but PSD matrices factor cleanly.
    pub fn noise_factor(&self) -> Result<DMatrix<f64>> {
        let d = &self.diffusion;
        let n = d.nrows();
        let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let tol = 1e-12 * scale;
        let mut c = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut pivot = d[(j, j)];
            for k in 0..j {
                pivot -= c[(j, k)] * c[(j, k)];
            }
            if pivot < -PSD_TOL * scale {
                return Err(Error::Domain(format!(
                    "diffusion matrix is not positive semidefinite (pivot {pivot:.3e} at {j})"
                )));
            }
            if pivot <= tol {
                continue;
            }
            let root = pivot.sqrt();
            c[(j, j)] = root;
            for i in (j + 1)..n {
                let mut s = d[(i, j)];
                for k in 0..j {
                    s -= c[(i, k)] * c[(j, k)];
                }
                c[(i, j)] = s / root;
            }
        }
        Ok(c)
    }
}

/// Serialized drift block: `{"A0": [...], "A1": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    #[serde(rename = "A0", default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(rename = "A1", default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// The model file. Absent drift, diffusion or channels default to zero/empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dimension: usize,
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub channels: Vec<JumpChannelPair>,
}

/// A single problem found by [`ModelConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDimension,
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },
    NonFinite {
        what: String,
    },
    DiffusionAsymmetric {
        i: usize,
        j: usize,
        difference: f64,
    },
    DiffusionNotPsd {
        min_eigenvalue: f64,
    },
    ChannelDimension {
        channel: usize,
        got: usize,
    },
    ZeroJump {
        channel: usize,
    },
    NegativeRateConstant {
        channel: usize,
        direction: &'static str,
        k: f64,
    },
    OrderLength {
        channel: usize,
        direction: &'static str,
        got: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension => write!(f, "dimension must be at least 1"),
            Violation::Shape {
                what,
                expected,
                got,
            } => write!(f, "{what} has shape {got}, expected {expected}"),
            Violation::NonFinite { what } => write!(f, "{what} contains non-finite entries"),
            Violation::DiffusionAsymmetric { i, j, difference } => write!(
                f,
                "diffusion not symmetric: |D[{i}][{j}] - D[{j}][{i}]| = {difference:.3e}"
            ),
            Violation::DiffusionNotPsd { min_eigenvalue } => write!(
                f,
                "diffusion not positive semidefinite: eigenvalue {min_eigenvalue:.6}"
            ),
            Violation::ChannelDimension { channel, got } => {
                write!(f, "channel {channel}: nu has length {got}")
            }
            Violation::ZeroJump { channel } => {
                write!(f, "channel {channel}: nu is the zero vector")
            }
            Violation::NegativeRateConstant {
                channel,
                direction,
                k,
            } => write!(f, "channel {channel} {direction}: rate constant {k} < 0"),
            Violation::OrderLength {
                channel,
                direction,
                got,
            } => write!(
                f,
                "channel {channel} {direction}: mass-action order has length {got}"
            ),
        }
    }
}

/// Outcome of validation: empty means the config is usable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl ModelConfig {
    /// One-dimensional Ornstein-Uhlenbeck model `A(z) = -a z`, diffusion `d`.
    pub fn ornstein_uhlenbeck(a: f64, d: f64) -> Self {
        Self {
            dimension: 1,
            label: format!("ou(a={a}, D={d})"),
            drift: Some(DriftConfig {
                offset: None,
                matrix: Some(vec![vec![-a]]),
            }),
            diffusion: Some(vec![vec![d]]),
            channels: vec![],
        }
    }

    /// Constant birth `k_birth`, linear death `k_death * z`.
    pub fn birth_death(k_birth: f64, k_death: f64) -> Self {
        Self {
            dimension: 1,
            label: format!("birth-death(k+={k_birth}, k-={k_death})"),
            drift: None,
            diffusion: None,
            channels: vec![JumpChannelPair::new(
                vec![1],
                RateLaw::constant(k_birth),
                RateLaw::mass_action(k_death, vec![1]),
            )],
        }
    }

    /// Two uncoupled coordinates: `z1` is Ornstein-Uhlenbeck (`-a z1`,
    /// diffusion `d`), `z2` is birth-death. `D = diag(d, 0)`.
    pub fn hybrid_ou_birth_death(a: f64, d: f64, k_birth: f64, k_death: f64) -> Self {
        Self {
            dimension: 2,
            label: format!("ou x birth-death(a={a}, D={d}, k+={k_birth}, k-={k_death})"),
            drift: Some(DriftConfig {
                offset: None,
                matrix: Some(vec![vec![-a, 0.0], vec![0.0, 0.0]]),
            }),
            diffusion: Some(vec![vec![d, 0.0], vec![0.0, 0.0]]),
            channels: vec![JumpChannelPair::new(
                vec![0, 1],
                RateLaw::constant(k_birth),
                RateLaw::mass_action(k_death, vec![0, 1]),
            )],
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    /// Checks shapes, finiteness, symmetry and positive semidefiniteness of
    /// `D`, nonnegative rate constants and nonzero jump directions.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.dimension;
        if n == 0 {
            v.push(Violation::ZeroDimension);
            return ValidationReport { violations: v };
        }

        if let Some(drift) = &self.drift {
            if let Some(a0) = &drift.offset {
                if a0.len() != n {
                    v.push(shape("A0", format!("[{n}]"), format!("[{}]", a0.len())));
                } else if a0.iter().any(|x| !x.is_finite()) {
                    v.push(Violation::NonFinite { what: "A0".into() });
                }
            }
            if let Some(a1) = &drift.matrix {
                check_square("A1", a1, n, &mut v);
            }
        }

        if let Some(d) = &self.diffusion {
            if check_square("diffusion", d, n, &mut v) {
                let m = DMatrix::from_fn(n, n, |i, j| d[i][j]);
                let mut symmetric = true;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let diff = (m[(i, j)] - m[(j, i)]).abs();
                        if diff > SYMMETRY_TOL {
                            symmetric = false;
                            v.push(Violation::DiffusionAsymmetric {
                                i,
                                j,
                                difference: diff,
                            });
                        }
                    }
                }
                if symmetric {
                    let sym = (&m + m.transpose()) * 0.5;
                    let min = SymmetricEigen::new(sym)
                        .eigenvalues
                        .iter()
                        .fold(f64::INFINITY, |a, &b| a.min(b));
                    if min < -PSD_TOL {
                        v.push(Violation::DiffusionNotPsd {
                            min_eigenvalue: min,
                        });
                    }
                }
            }
        }

        for (c, ch) in self.channels.iter().enumerate() {
            if ch.nu.len() != n {
                v.push(Violation::ChannelDimension {
                    channel: c,
                    got: ch.nu.len(),
                });
            } else if ch.nu.iter().all(|&x| x == 0) {
                v.push(Violation::ZeroJump { channel: c });
            }
            for (direction, law) in [("forward", &ch.forward), ("backward", &ch.backward)] {
                let k = law.k();
                if !k.is_finite() {
                    v.push(Violation::NonFinite {
                        what: format!("channel {c} {direction} rate constant"),
                    });
                } else if k < 0.0 {
                    v.push(Violation::NegativeRateConstant {
                        channel: c,
                        direction,
                        k,
                    });
                }
                if let RateLaw::MassAction { order, .. } = law {
                    if order.len() != n {
                        v.push(Violation::OrderLength {
                            channel: c,
                            direction,
                            got: order.len(),
                        });
                    }
                }
            }
        }

        ValidationReport { violations: v }
    }
}

fn shape(what: &'static str, expected: String, got: String) -> Violation {
    Violation::Shape {
        what,
        expected,
        got,
    }
}

fn check_square(what: &'static str, m: &[Vec<f64>], n: usize, v: &mut Vec<Violation>) -> bool {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        let cols = m.iter().map(Vec::len).max().unwrap_or(0);
        v.push(shape(
            what,
            format!("{n}x{n}"),
            format!("{}x{}", m.len(), cols),
        ));
        return false;
    }
    if m.iter().flatten().any(|x| !x.is_finite()) {
        v.push(Violation::NonFinite { what: what.into() });
        return false;
    }
    true
}

/// A validated, immutable generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    label: String,
    dimension: usize,
    drift_diffusion: DriftDiffusion,
    channels: Vec<JumpChannelPair>,
}

impl TryFrom<ModelConfig> for GeneratorSpec {
    type Error = Error;

    fn try_from(config: ModelConfig) -> Result<Self> {
        let report = config.validate();
        if !report.is_ok() {
            return Err(Error::InvalidSpec(report.violations));
        }
        let n = config.dimension;
        let mut dd = DriftDiffusion::zero(n);
        if let Some(drift) = &config.drift {
            if let Some(a0) = &drift.offset {
                dd.offset = DVector::from_column_slice(a0);
            }
            if let Some(a1) = &drift.matrix {
                dd.matrix = DMatrix::from_fn(n, n, |i, j| a1[i][j]);
            }
        }
        if let Some(d) = &config.diffusion {
            dd.diffusion = DMatrix::from_fn(n, n, |i, j| d[i][j]);
        }
        Ok(Self {
            label: config.label,
            dimension: n,
            drift_diffusion: dd,
            channels: config.channels,
        })
    }
}

impl GeneratorSpec {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::try_from(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config = ModelConfig::from_json(text)
            .map_err(|e| Error::InvalidArgument(format!("model JSON: {e}")))?;
        Self::new(config)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn drift_diffusion(&self) -> &DriftDiffusion {
        &self.drift_diffusion
    }

    pub fn channels(&self) -> &[JumpChannelPair] {
        &self.channels
    }

    pub fn drift(&self, z: &[f64]) -> Result<StateVector> {
        self.drift_diffusion.drift(z)
    }

    pub fn check_state(&self, z: &[f64]) -> Result<()> {
        check_dim(self.dimension, z.len())?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite state {z:?}")));
        }
        Ok(())
    }

    /// Serializes back to the config form. Rebuilding from it yields an
    /// identical spec.
    pub fn to_config(&self) -> ModelConfig {
        let n = self.dimension;
        let dd = &self.drift_diffusion;
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect()
        };
        ModelConfig {
            dimension: n,
            label: self.label.clone(),
            drift: Some(DriftConfig {
                offset: Some(dd.offset.iter().copied().collect()),
                matrix: Some(rows(&dd.matrix)),
            }),
            diffusion: Some(rows(&dd.diffusion)),
            channels: self.channels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_law_examples() {
        assert_eq!(RateLaw::constant(2.0).evaluate(&[7.0, -3.0]).unwrap(), 2.0);
        assert_eq!(RateLaw::mass_action(2.0, vec![1]).evaluate(&[3.0]).unwrap(), 6.0);
        assert_eq!(
            RateLaw::mass_action(1.5, vec![2, 1])
                .evaluate(&[2.0, 3.0])
                .unwrap(),
            18.0
        );
    }

    #[test]
    fn zero_order_does_not_gate() {
        let law = RateLaw::mass_action(3.0, vec![0, 1]);
        assert_eq!(law.evaluate(&[0.0, 2.0]).unwrap(), 6.0);
        // negative coordinate with zero order is fine too
        assert_eq!(law.evaluate(&[-1.0, 2.0]).unwrap(), 6.0);
    }

    #[test]
    fn mass_action_rejects_negative_state() {
        let law = RateLaw::mass_action(1.0, vec![1]);
        assert!(matches!(law.evaluate(&[-0.5]), Err(Error::Domain(_))));
        assert_eq!(law.propensity(&[-0.5]), 0.0);
    }

    #[test]
    fn mass_action_gradient_termwise() {
        let law = RateLaw::mass_action(1.5, vec![2, 1]);
        let mut g = vec![0.0; 2];
        law.add_gradient(&[2.0, 3.0], 1.0, &mut g).unwrap();
        assert_eq!(g, vec![1.5 * 2.0 * 2.0 * 3.0, 1.5 * 4.0]);
        // at the boundary the first-order derivative stays finite
        let mut g = vec![0.0; 2];
        law.add_gradient(&[0.0, 3.0], 1.0, &mut g).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let mut g = vec![0.0];
        RateLaw::mass_action(2.0, vec![1])
            .add_gradient(&[0.0], 1.0, &mut g)
            .unwrap();
        assert_eq!(g, vec![2.0]);
    }

    #[test]
    fn drift_examples() {
        let ou = GeneratorSpec::new(ModelConfig::ornstein_uhlenbeck(1.0, 1.0)).unwrap();
        assert_eq!(ou.drift(&[2.0]).unwrap(), vec![-2.0]);

        let cfg = ModelConfig {
            dimension: 1,
            label: String::new(),
            drift: Some(DriftConfig {
                offset: Some(vec![1.0]),
                matrix: None,
            }),
            diffusion: None,
            channels: vec![],
        };
        let spec = GeneratorSpec::new(cfg).unwrap();
        assert_eq!(spec.drift(&[5.0]).unwrap(), vec![1.0]);

        let bd = GeneratorSpec::new(ModelConfig::birth_death(2.0, 1.0)).unwrap();
        assert_eq!(bd.drift(&[5.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            bd.drift(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    fn with_diffusion(d: Vec<Vec<f64>>) -> ModelConfig {
        ModelConfig {
            dimension: d.len(),
            label: String::new(),
            drift: None,
            diffusion: Some(d),
            channels: vec![],
        }
    }

    #[test]
    fn validate_identity_ok() {
        let r = with_diffusion(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).validate();
        assert!(r.is_ok(), "{r:?}");
    }

    #[test]
    fn validate_rejects_indefinite_diffusion() {
        let r = with_diffusion(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).validate();
        match r.violations.as_slice() {
            [Violation::DiffusionNotPsd { min_eigenvalue }] => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_asymmetric_diffusion() {
        let r = with_diffusion(vec![vec![1.0, 0.5], vec![0.0, 1.0]]).validate();
        assert!(matches!(
            r.violations.as_slice(),
            [Violation::DiffusionAsymmetric { i: 0, j: 1, .. }]
        ));
    }

    #[test]
    fn validate_rejects_zero_jump_and_bad_rates() {
        let cfg = ModelConfig {
            dimension: 2,
            label: String::new(),
            drift: None,
            diffusion: None,
            channels: vec![
                JumpChannelPair::new(vec![0, 0], RateLaw::constant(1.0), RateLaw::constant(1.0)),
                JumpChannelPair::new(
                    vec![1, 0],
                    RateLaw::constant(-1.0),
                    RateLaw::mass_action(1.0, vec![1]),
                ),
                JumpChannelPair::new(vec![1], RateLaw::constant(1.0), RateLaw::constant(1.0)),
            ],
        };
        let r = cfg.validate();
        assert!(r.violations.contains(&Violation::ZeroJump { channel: 0 }));
        assert!(r.violations.iter().any(|v| matches!(
            v,
            Violation::NegativeRateConstant { channel: 1, .. }
        )));
        assert!(r.violations.iter().any(|v| matches!(
            v,
            Violation::OrderLength { channel: 1, got: 1, .. }
        )));
        assert!(r
            .violations
            .contains(&Violation::ChannelDimension { channel: 2, got: 1 }));
        assert!(GeneratorSpec::new(cfg).is_err());
    }

    #[test]
    fn validate_shapes() {
        let cfg = ModelConfig {
            dimension: 2,
            label: String::new(),
            drift: Some(DriftConfig {
                offset: Some(vec![1.0]),
                matrix: Some(vec![vec![1.0, 0.0]]),
            }),
            diffusion: None,
            channels: vec![],
        };
        assert_eq!(cfg.validate().violations.len(), 2);
        let zero = ModelConfig {
            dimension: 0,
            ..cfg
        };
        assert_eq!(zero.validate().violations, vec![Violation::ZeroDimension]);
    }

    #[test]
    fn json_defaults_and_unknown_keys() {
        let spec = GeneratorSpec::from_json(r#"{"dimension": 1}"#).unwrap();
        assert!(!spec.drift_diffusion().has_drift());
        assert!(spec.channels().is_empty());

        let typo = r#"{"dimension": 1, "difusion": [[1.0]]}"#;
        assert!(GeneratorSpec::from_json(typo).is_err());

        let bad_rate = r#"{"dimension": 1, "channels": [{"nu": [1],
            "forward": {"kind": "constant", "k": 1, "order": [1]},
            "backward": {"kind": "constant", "k": 1}}]}"#;
        assert!(GeneratorSpec::from_json(bad_rate).is_err());

        let ok = r#"{"dimension": 1, "label": "bd", "channels": [{"nu": [1],
            "forward": {"kind": "constant", "k": 2},
            "backward": {"kind": "mass_action", "k": 1, "order": [1]}}]}"#;
        let spec = GeneratorSpec::from_json(ok).unwrap();
        assert_eq!(spec.channels()[0].rates(&[3.0]).unwrap(), (2.0, 3.0));
    }

    #[test]
    fn noise_factor_handles_singular_psd() {
        let spec = GeneratorSpec::new(ModelConfig::hybrid_ou_birth_death(1.0, 2.0, 2.0, 1.0))
            .unwrap();
        let c = spec.drift_diffusion().noise_factor().unwrap();
        let cct = &c * c.transpose();
        assert!((cct - &spec.drift_diffusion().diffusion).amax() < 1e-15);

        let d = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 2.0, 1.0, 0.0, 1.0, 3.0]);
        let dd = DriftDiffusion {
            diffusion: d.clone(),
            ..DriftDiffusion::zero(3)
        };
        let c = dd.noise_factor().unwrap();
        assert!((&c * c.transpose() - d).amax() < 1e-14);
    }
}
