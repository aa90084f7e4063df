//! Stationary rate functions (quasi-potentials) and checks that they solve
//! the Hamilton-Jacobi equation and decrease along the deterministic flow.
//!
//! Sign convention: `phi` is the rate function and decreases along the flow.
//! The associated entropy is `-phi`.

use crate::determlimit::vector_field;
use crate::error::{check_dim, Error, Result};
use crate::model::{GeneratorSpec, StateVector};
use crate::trajectory::Trajectory;

/// Relative-entropy gradients are only evaluated for coordinates at or above
/// this floor; `ln(z_i / z_ss_i)` diverges at zero.
pub const RELATIVE_ENTROPY_FLOOR: f64 = 1e-6;

/// A scalar potential with an analytic gradient.
pub trait Potential {
    fn value(&self, z: &[f64]) -> Result<f64>;
    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateFunctionCandidate {
    /// `sum_i a z_i^2 / (2 D)`.
    OuQuadratic { a: f64, diffusion: f64 },
    /// `sum_i z_i ln(z_i / z_ss_i) - z_i + z_ss_i`.
    RelativeEntropy { z_ss: StateVector },
    /// One-dimensional piecewise-linear table on an increasing grid.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
    /// Sum of candidates acting on disjoint coordinate blocks.
    Separable(Vec<Block>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub coords: Vec<usize>,
    pub candidate: RateFunctionCandidate,
}

impl RateFunctionCandidate {
    pub fn ou_quadratic(a: f64, diffusion: f64) -> Result<Self> {
        if !(a > 0.0 && diffusion > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "OU candidate needs a > 0 and D > 0, got a = {a}, D = {diffusion}"
            )));
        }
        Ok(Self::OuQuadratic { a, diffusion })
    }

    pub fn relative_entropy(z_ss: StateVector) -> Result<Self> {
        if z_ss.is_empty() || z_ss.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "relative-entropy reference state must be strictly positive, got {z_ss:?}"
            )));
        }
        Ok(Self::RelativeEntropy { z_ss })
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::InvalidArgument(
                "tabulated candidate needs matching grid and values, length >= 2".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("tabulated grid must increase strictly".into()));
        }
        Ok(Self::Tabulated { grid, values })
    }

    pub fn separable(blocks: Vec<Block>) -> Result<Self> {
        let mut seen: Vec<usize> = blocks.iter().flat_map(|b| b.coords.clone()).collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != total {
            return Err(Error::InvalidArgument("separable blocks overlap".into()));
        }
        Ok(Self::Separable(blocks))
    }

    fn block_input(coords: &[usize], z: &[f64]) -> Result<Vec<f64>> {
        coords
            .iter()
            .map(|&i| {
                z.get(i).copied().ok_or(Error::DimensionMismatch {
                    expected: i + 1,
                    got: z.len(),
                })
            })
            .collect()
    }

    fn table_segment(grid: &[f64], z: f64) -> Result<usize> {
        if z < grid[0] || z > grid[grid.len() - 1] {
            return Err(Error::Domain(format!(
                "z = {z} outside tabulated range [{}, {}]",
                grid[0],
                grid[grid.len() - 1]
            )));
        }
        Ok(grid.partition_point(|&g| g <= z).clamp(1, grid.len() - 1) - 1)
    }
}

impl Potential for RateFunctionCandidate {
    fn value(&self, z: &[f64]) -> Result<f64> {
        match self {
            Self::OuQuadratic { a, diffusion } => {
                Ok(z.iter().map(|zi| a * zi * zi / (2.0 * diffusion)).sum())
            }
            Self::RelativeEntropy { z_ss } => crn_relative_entropy(z, z_ss),
            Self::Tabulated { grid, values } => {
                check_dim(1, z.len())?;
                let k = Self::table_segment(grid, z[0])?;
                let w = (z[0] - grid[k]) / (grid[k + 1] - grid[k]);
                Ok(values[k] + w * (values[k + 1] - values[k]))
            }
            Self::Separable(blocks) => blocks
                .iter()
                .map(|b| b.candidate.value(&Self::block_input(&b.coords, z)?))
                .sum(),
        }
    }

    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::OuQuadratic { a, diffusion } => Ok(z.iter().map(|zi| a * zi / diffusion).collect()),
            Self::RelativeEntropy { z_ss } => crn_relative_entropy_gradient(z, z_ss),
            Self::Tabulated { grid, values } => {
                check_dim(1, z.len())?;
                let k = Self::table_segment(grid, z[0])?;
                Ok(vec![(values[k + 1] - values[k]) / (grid[k + 1] - grid[k])])
            }
            Self::Separable(blocks) => {
                let mut g = vec![0.0; z.len()];
                for b in blocks {
                    let gb = b.candidate.gradient(&Self::block_input(&b.coords, z)?)?;
                    for (&i, v) in b.coords.iter().zip(gb) {
                        g[i] += v;
                    }
                }
                Ok(g)
            }
        }
    }
}

/// Stationary or finite-time OU rate function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Stationary,
    At(f64),
}

/// `a z^2 / (2 D (1 - e^{-2 a t}))`, or `a z^2 / (2 D)` when stationary.
pub fn ou_rate_function(a: f64, diffusion: f64, z: f64, horizon: Horizon) -> Result<f64> {
    match horizon {
        Horizon::Stationary => Ok(RateFunctionCandidate::ou_quadratic(a, diffusion)?.value(&[z])?),
        Horizon::At(t) => TimeDependentOu::new(a, diffusion)?.value(z, t),
    }
}

/// `phi(z, t) = a z^2 / (2 D (1 - e^{-2 a t}))`: the rate function of the OU
/// process started at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDependentOu {
    pub a: f64,
    pub diffusion: f64,
}

impl TimeDependentOu {
    pub fn new(a: f64, diffusion: f64) -> Result<Self> {
        RateFunctionCandidate::ou_quadratic(a, diffusion)?;
        Ok(Self { a, diffusion })
    }

    fn spread(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("t = {t} must be > 0")));
        }
        Ok(-(-2.0 * self.a * t).exp_m1())
    }

    pub fn value(&self, z: f64, t: f64) -> Result<f64> {
        let s = self.spread(t)?;
        Ok(self.a * z * z / (2.0 * self.diffusion * s))
    }

    pub fn gradient(&self, z: f64, t: f64) -> Result<f64> {
        let s = self.spread(t)?;
        Ok(self.a * z / (self.diffusion * s))
    }

    /// `d phi / dt = -a^2 z^2 e^{-2at} / (D s^2)`.
    pub fn time_derivative(&self, z: f64, t: f64) -> Result<f64> {
        let s = self.spread(t)?;
        let a = self.a;
        Ok(-a * a * z * z * (-2.0 * a * t).exp() / (self.diffusion * s * s))
    }
}

/// `sum_i z_i ln(z_i / z_ss_i) - z_i + z_ss_i` with `0 ln 0 = 0`.
pub fn crn_relative_entropy(z: &[f64], z_ss: &[f64]) -> Result<f64> {
    check_dim(z_ss.len(), z.len())?;
    let mut s = 0.0;
    for (&zi, &ri) in z.iter().zip(z_ss) {
        if !(ri > 0.0) {
            return Err(Error::Domain(format!("reference state entry {ri} must be > 0")));
        }
        if zi < 0.0 {
            return Err(Error::Domain(format!("relative entropy at negative z = {zi}")));
        }
        let log_term = if zi == 0.0 { 0.0 } else { zi * (zi / ri).ln() };
        s += log_term - zi + ri;
    }
    Ok(s)
}

/// `ln(z_i / z_ss_i)`, defined for `z_i >= RELATIVE_ENTROPY_FLOOR`.
pub fn crn_relative_entropy_gradient(z: &[f64], z_ss: &[f64]) -> Result<Vec<f64>> {
    check_dim(z_ss.len(), z.len())?;
    z.iter()
        .zip(z_ss)
        .map(|(&zi, &ri)| {
            if zi < RELATIVE_ENTROPY_FLOOR {
                Err(Error::Domain(format!(
                    "relative-entropy gradient needs z >= {RELATIVE_ENTROPY_FLOOR}, got {zi}"
                )))
            } else if !(ri > 0.0) {
                Err(Error::Domain(format!("reference state entry {ri} must be > 0")))
            } else {
                Ok((zi / ri).ln())
            }
        })
        .collect()
}

/// Left side of the stationary Hamilton-Jacobi equation,
/// `A.grad + grad^T D grad + sum_l [R_l (e^{nu_l.grad} - 1) + R_-l (e^{-nu_l.grad} - 1)]`.
/// Zero for a true quasi-potential.
pub fn stationary_hje_residual<P: Potential + ?Sized>(
    spec: &GeneratorSpec,
    candidate: &P,
    z: &[f64],
) -> Result<f64> {
    spec.check_state(z)?;
    let grad = candidate.gradient(z)?;
    check_dim(spec.dimension(), grad.len())?;
    let dd = spec.drift_diffusion();
    let drift = dd.drift(z)?;
    let mut jump = 0.0;
    for ch in spec.channels() {
        let e = ch.nu_dot(&grad);
        if e.abs() > crate::ldp::MAX_EXPONENT {
            return Err(Error::MomentumOverflow {
                exponent: e.abs(),
                limit: crate::ldp::MAX_EXPONENT,
            });
        }
        let (fwd, bwd) = ch.rates(z)?;
        jump += fwd * e.exp_m1() + bwd * (-e).exp_m1();
    }
    let transport: f64 = drift.iter().zip(&grad).map(|(a, g)| a * g).sum();
    Ok(transport + dd.quadratic_form(&grad) + jump)
}

/// `d phi/dt + A grad phi + grad phi D grad phi` for the OU transient
/// candidate with drift `-a z` and no jumps.
pub fn transient_hje_residual(a: f64, diffusion: f64, z: f64, t: f64) -> Result<f64> {
    let ou = TimeDependentOu::new(a, diffusion)?;
    let g = ou.gradient(z, t)?;
    Ok(ou.time_derivative(z, t)? + (-a * z) * g + g * diffusion * g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub t: f64,
    pub phi: f64,
    pub dphi_dt: f64,
}

impl LyapunovSample {
    /// Entropy is `-phi`.
    pub fn entropy(&self) -> f64 {
        -self.phi
    }
}

/// `d phi / dt = F(z(t)) . grad phi(z(t))` along a deterministic trajectory.
pub fn lyapunov_scan<P: Potential + ?Sized>(
    spec: &GeneratorSpec,
    candidate: &P,
    trajectory: &Trajectory,
) -> Result<Vec<LyapunovSample>> {
    lyapunov_scan_with(|z| vector_field(spec, z), candidate, trajectory)
}

/// As [`lyapunov_scan`] for an arbitrary field.
pub fn lyapunov_scan_with<F, P>(
    field: F,
    candidate: &P,
    trajectory: &Trajectory,
) -> Result<Vec<LyapunovSample>>
where
    F: Fn(&[f64]) -> Result<StateVector>,
    P: Potential + ?Sized,
{
    trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(&t, z)| {
            let f = field(z)?;
            let g = candidate.gradient(z)?;
            Ok(LyapunovSample {
                t,
                phi: candidate.value(z)?,
                dphi_dt: f.iter().zip(&g).map(|(a, b)| a * b).sum(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::determlimit::{integrate_ode, OdeConfig};
    use crate::ldp::hamiltonian;
    use crate::model::ModelConfig;

    fn ou() -> GeneratorSpec {
        GeneratorSpec::new(ModelConfig::ornstein_uhlenbeck(1.0, 1.0)).unwrap()
    }

    fn bd() -> GeneratorSpec {
        GeneratorSpec::new(ModelConfig::birth_death(2.0, 1.0)).unwrap()
    }

    #[test]
    fn ou_rate_examples() {
        assert_eq!(ou_rate_function(1.0, 1.0, 0.0, Horizon::At(0.3)).unwrap(), 0.0);
        assert_eq!(ou_rate_function(1.0, 1.0, 2.0, Horizon::Stationary).unwrap(), 2.0);
        let t = 2f64.ln() / 2.0;
        let v = ou_rate_function(1.0, 1.0, 1.0, Horizon::At(t)).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert!(ou_rate_function(1.0, 1.0, 1.0, Horizon::At(0.0)).is_err());
    }

    #[test]
    fn relative_entropy_examples() {
        assert_eq!(crn_relative_entropy(&[2.0, 0.5], &[2.0, 0.5]).unwrap(), 0.0);
        let v = crn_relative_entropy(&[1.0], &[2.0]).unwrap();
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert_eq!(crn_relative_entropy(&[0.0], &[2.0]).unwrap(), 2.0);
        assert!(crn_relative_entropy(&[1.0], &[0.0]).is_err());
        assert!(RateFunctionCandidate::relative_entropy(vec![1.0, 0.0]).is_err());
        assert!(crn_relative_entropy_gradient(&[0.0], &[2.0]).is_err());
    }

    #[test]
    fn stationary_residuals() {
        let rel = RateFunctionCandidate::relative_entropy(vec![2.0]).unwrap();
        for k in 0..50 {
            let z = 0.1 + 4.9 * k as f64 / 49.0;
            assert!(stationary_hje_residual(&bd(), &rel, &[z]).unwrap().abs() <= 1e-12);
        }
        let quad = RateFunctionCandidate::ou_quadratic(1.0, 1.0).unwrap();
        for k in 0..61 {
            let z = -3.0 + 0.1 * k as f64;
            assert!(stationary_hje_residual(&ou(), &quad, &[z]).unwrap().abs() <= 1e-12);
        }
    }

    struct Square;
    impl Potential for Square {
        fn value(&self, z: &[f64]) -> Result<f64> {
            Ok(z[0] * z[0])
        }
        fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![2.0 * z[0]])
        }
    }

    #[test]
    fn wrong_candidate_has_residual() {
        let worst = (1..=10)
            .map(|k| stationary_hje_residual(&bd(), &Square, &[0.5 * k as f64]).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(worst > 1.0);
    }

    #[test]
    fn residual_is_the_hamiltonian() {
        let rel = RateFunctionCandidate::relative_entropy(vec![2.0]).unwrap();
        for z in [0.3, 1.0, 4.5] {
            let g = rel.gradient(&[z]).unwrap();
            let h = hamiltonian(&bd(), &[z], &g).unwrap();
            let r = stationary_hje_residual(&bd(), &Square, &[z]).unwrap();
            let hs = hamiltonian(&bd(), &[z], &Square.gradient(&[z]).unwrap()).unwrap();
            assert!((h - stationary_hje_residual(&bd(), &rel, &[z]).unwrap()).abs() <= 1e-14);
            assert!((r - hs).abs() <= 1e-14 * hs.abs().max(1.0));
        }
    }

    #[test]
    fn transient_residual() {
        for i in 0..10 {
            for j in 0..10 {
                let z = -3.0 + 6.0 * i as f64 / 9.0;
                let t = 0.05 + 4.95 * j as f64 / 9.0;
                assert!(transient_hje_residual(1.0, 1.0, z, t).unwrap().abs() <= 1e-10);
            }
        }
        assert_eq!(transient_hje_residual(1.0, 1.0, 0.0, 0.7).unwrap(), 0.0);
        assert!(transient_hje_residual(1.0, 1.0, 1.5, 60.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn lyapunov_examples() {
        let rel = RateFunctionCandidate::relative_entropy(vec![2.0]).unwrap();
        let at_min = integrate_ode(&bd(), &[2.0], &OdeConfig::new(2.0, 0.01)).unwrap();
        assert!(lyapunov_scan(&bd(), &rel, &at_min).unwrap().iter().all(|s| s.dphi_dt == 0.0));

        let tr = integrate_ode(&bd(), &[0.2], &OdeConfig::new(10.0, 0.01)).unwrap();
        let scan = lyapunov_scan(&bd(), &rel, &tr).unwrap();
        assert!(scan.iter().all(|s| s.dphi_dt <= 1e-12));
        assert!(scan[0].dphi_dt < 0.0);

        let quad = RateFunctionCandidate::ou_quadratic(1.0, 1.0).unwrap();
        let tr = integrate_ode(&ou(), &[3.0], &OdeConfig::new(5.0, 0.01)).unwrap();
        for s in lyapunov_scan(&ou(), &quad, &tr).unwrap() {
            let z = tr.state_at(s.t).unwrap()[0];
            assert!((s.dphi_dt + z * z).abs() < 1e-12);
            assert!(s.dphi_dt < 0.0);
            assert_eq!(s.entropy(), -s.phi);
        }
    }

    #[test]
    fn tabulated_and_separable() {
        let tab = RateFunctionCandidate::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(tab.value(&[1.5]).unwrap(), 1.25);
        assert_eq!(tab.gradient(&[1.5]).unwrap(), vec![1.5]);
        assert!(tab.value(&[2.5]).is_err());

        let sep = RateFunctionCandidate::separable(vec![
            Block {
                coords: vec![0],
                candidate: RateFunctionCandidate::ou_quadratic(1.0, 1.0).unwrap(),
            },
            Block {
                coords: vec![1],
                candidate: RateFunctionCandidate::relative_entropy(vec![2.0]).unwrap(),
            },
        ])
        .unwrap();
        let v = sep.value(&[1.0, 1.0]).unwrap();
        assert!((v - (0.5 + 1.0 - 2f64.ln())).abs() < 1e-15);
        assert_eq!(sep.gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 0.0]);
    }
}
