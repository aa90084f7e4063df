//! The deterministic (small-noise) limit `dz/dt = F(z)` of a generator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{GeneratorSpec, StateVector};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub t_end: f64,
    pub dt: f64,
    pub record_stride: usize,
}

impl OdeConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            record_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end = {} must be > 0", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} must lie in (0, t_end]",
                self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidArgument("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the last one is shortened if `dt` does not divide `t_end`.
    pub fn steps(&self) -> usize {
        step_count(self.t_end, self.dt)
    }
}

pub(crate) fn step_count(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
}

pub(crate) fn grid_time(k: usize, n_steps: usize, t_end: f64, dt: f64) -> f64 {
    if k == n_steps {
        t_end
    } else {
        k as f64 * dt
    }
}

/// `F(z) = A(z) + sum_l nu_l (R_l(z) - R_-l(z))`.
pub fn vector_field(spec: &GeneratorSpec, z: &[f64]) -> Result<StateVector> {
    let mut f = spec.drift(z)?;
    for ch in spec.channels() {
        let (fwd, bwd) = ch.rates(z)?;
        let net = fwd - bwd;
        for (fi, &n) in f.iter_mut().zip(&ch.nu) {
            *fi += f64::from(n) * net;
        }
    }
    Ok(f)
}

/// One classical RK4 step of an autonomous field.
pub(crate) fn rk4_step<F>(field: &F, z: &[f64], h: f64) -> Result<StateVector>
where
    F: Fn(&[f64]) -> Result<StateVector>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> StateVector {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    };
    let k1 = field(z)?;
    let k2 = field(&axpy(z, 0.5 * h, &k1))?;
    let k3 = field(&axpy(z, 0.5 * h, &k2))?;
    let k4 = field(&axpy(z, h, &k3))?;
    Ok(z
        .iter()
        .enumerate()
        .map(|(i, zi)| zi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Fixed-step RK4 for an arbitrary autonomous field.
///
/// Stops with [`Error::BlowUp`] at the first non-finite state; the error
/// carries the last finite state and its time.
pub fn integrate_field<F>(field: F, z0: &[f64], cfg: &OdeConfig) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<StateVector>,
{
    cfg.validate()?;
    let n_steps = cfg.steps();
    let mut traj = Trajectory::with_capacity(n_steps / cfg.record_stride + 2);
    let mut z = z0.to_vec();
    traj.push(0.0, z.clone());
    let mut t = 0.0;
    for k in 1..=n_steps {
        let t_next = grid_time(k, n_steps, cfg.t_end, cfg.dt);
        let next = match rk4_step(&field, &z, t_next - t) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            Ok(_) => return Err(Error::BlowUp { t, last_state: z }),
            // a domain error mid-step means the state left the admissible set
            Err(Error::Domain(_)) => return Err(Error::BlowUp { t, last_state: z }),
            Err(e) => return Err(e),
        };
        z = next;
        t = t_next;
        if k % cfg.record_stride == 0 || k == n_steps {
            traj.push(t, z.clone());
        }
    }
    Ok(traj)
}

/// Integrates `dz/dt = F(z)` with fixed-step RK4.
pub fn integrate_ode(spec: &GeneratorSpec, z0: &[f64], cfg: &OdeConfig) -> Result<Trajectory> {
    spec.check_state(z0)?;
    integrate_field(|z| vector_field(spec, z), z0, cfg)
}

const NEWTON_MAX_ITERS: usize = 100;

/// Newton iteration on `F` with a central-difference Jacobian
/// (step `1e-6 (1 + |z_i|)`). Steps that leave the domain of the rate laws
/// are halved.
pub fn find_fixed_point(spec: &GeneratorSpec, guess: &[f64], tol: f64) -> Result<StateVector> {
    spec.check_state(guess)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be > 0")));
    }
    let n = spec.dimension();
    let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut z = guess.to_vec();
    let mut f = vector_field(spec, &z)?;
    for _ in 0..NEWTON_MAX_ITERS {
        if norm(&f) <= tol {
            return Ok(z);
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + z[j].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            // one-sided differences at the boundary of the orthant
            let column: Vec<f64> = match (vector_field(spec, &zp), vector_field(spec, &zm)) {
                (Ok(fp), Ok(fm)) => (0..n).map(|i| (fp[i] - fm[i]) / (2.0 * h)).collect(),
                (Ok(fp), Err(_)) => (0..n).map(|i| (fp[i] - f[i]) / h).collect(),
                (Err(_), Ok(fm)) => (0..n).map(|i| (f[i] - fm[i]) / h).collect(),
                (Err(e), Err(_)) => return Err(e),
            };
            for (i, c) in column.into_iter().enumerate() {
                jac[(i, j)] = c;
            }
        }
        let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::Singular("fixed-point Jacobian"))?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("fixed-point Jacobian"));
        }
        let mut scale = 1.0;
        loop {
            let trial: StateVector = z.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
            match vector_field(spec, &trial) {
                Ok(ft) => {
                    z = trial;
                    f = ft;
                    break;
                }
                Err(Error::Domain(_)) if scale > 1e-12 => scale *= 0.5,
                Err(e) => return Err(e),
            }
        }
    }
    if norm(&f) <= tol {
        return Ok(z);
    }
    Err(Error::NoConvergence {
        what: "fixed-point Newton iteration",
        iterations: NEWTON_MAX_ITERS,
        residual: norm(&f),
    })
}
