//! Fluctuation Hamiltonian `H(z, y)`, its Hamiltonian flow, the
//! Legendre-dual Lagrangian and discrete least-action paths.
//!
//! ```text
//! H(z, y) = A(z).y + y^T D y + sum_l [ R_l(z) (e^{nu_l.y} - 1) + R_-l(z) (e^{-nu_l.y} - 1) ]
//! L(z, v) = sup_y [ y.v - H(z, y) ]
//! ```
//!
//! `H(z, 0) = 0` and `dH/dy(z, 0) = F(z)`, so the `y = 0` slice of the flow
//! is the deterministic limit and `L(z, F(z)) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::determlimit::{grid_time, rk4_step, step_count};
use crate::error::{check_dim, Error, Result};
use crate::model::{GeneratorSpec, StateVector};

/// Largest `|nu.y|` accepted before `exp` is considered out of range.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub z: StateVector,
    pub y: Vec<f64>,
}

impl PhasePoint {
    pub fn new(z: StateVector, y: Vec<f64>) -> Self {
        Self { z, y }
    }
}

fn guarded_exponent(e: f64) -> Result<f64> {
    if e.abs() > MAX_EXPONENT || !e.is_finite() {
        Err(Error::MomentumOverflow {
            exponent: e.abs(),
            limit: MAX_EXPONENT,
        })
    } else {
        Ok(e)
    }
}

fn check_phase(spec: &GeneratorSpec, z: &[f64], y: &[f64]) -> Result<()> {
    check_dim(spec.dimension(), z.len())?;
    check_dim(spec.dimension(), y.len())
}

pub fn hamiltonian(spec: &GeneratorSpec, z: &[f64], y: &[f64]) -> Result<f64> {
    check_phase(spec, z, y)?;
    let dd = spec.drift_diffusion();
    let a = dd.drift(z)?;
    let mut h: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
    h += dd.quadratic_form(y);
    for ch in spec.channels() {
        let e = guarded_exponent(ch.nu_dot(y))?;
        let (fwd, bwd) = ch.rates(z)?;
        h += fwd * e.exp_m1() + bwd * (-e).exp_m1();
    }
    Ok(h)
}

/// `dH/dy = A + 2 D y + sum_l nu_l (R_l e^{nu_l.y} - R_-l e^{-nu_l.y})`.
pub fn momentum_gradient(spec: &GeneratorSpec, z: &[f64], y: &[f64]) -> Result<StateVector> {
    check_phase(spec, z, y)?;
    let dd = spec.drift_diffusion();
    let mut dz = dd.drift(z)?;
    let dy = dd.apply_diffusion(y);
    for (zi, di) in dz.iter_mut().zip(&dy) {
        *zi += 2.0 * di;
    }
    for ch in spec.channels() {
        let e = guarded_exponent(ch.nu_dot(y))?;
        let (fwd, bwd) = ch.rates(z)?;
        let net = fwd * e.exp() - bwd * (-e).exp();
        for (zi, &n) in dz.iter_mut().zip(&ch.nu) {
            *zi += f64::from(n) * net;
        }
    }
    Ok(dz)
}

/// `d2H/dy2 = 2 D + sum_l nu_l nu_l^T (R_l e^{nu_l.y} + R_-l e^{-nu_l.y})`.
fn momentum_hessian(spec: &GeneratorSpec, z: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    let n = spec.dimension();
    let mut hess = spec.drift_diffusion().diffusion.clone() * 2.0;
    for ch in spec.channels() {
        let e = guarded_exponent(ch.nu_dot(y))?;
        let (fwd, bwd) = ch.rates(z)?;
        let w = fwd * e.exp() + bwd * (-e).exp();
        for i in 0..n {
            for j in 0..n {
                hess[(i, j)] += w * f64::from(ch.nu[i]) * f64::from(ch.nu[j]);
            }
        }
    }
    Ok(hess)
}

/// `-dH/dz = -(A1^T y + sum_l [ grad R_l (e^{nu_l.y} - 1) + grad R_-l (e^{-nu_l.y} - 1) ])`.
pub fn state_force(spec: &GeneratorSpec, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_phase(spec, z, y)?;
    let n = spec.dimension();
    let a1 = &spec.drift_diffusion().matrix;
    let mut g: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a1[(i, j)] * y[i]).sum()).collect();
    for ch in spec.channels() {
        let e = guarded_exponent(ch.nu_dot(y))?;
        ch.forward.add_gradient(z, e.exp_m1(), &mut g)?;
        ch.backward.add_gradient(z, (-e).exp_m1(), &mut g)?;
    }
    for v in &mut g {
        *v = -*v;
    }
    Ok(g)
}

/// Hamilton's equations `(dz/dt, dy/dt) = (dH/dy, -dH/dz)`.
pub fn hamilton_rhs(spec: &GeneratorSpec, p: &PhasePoint) -> Result<(StateVector, Vec<f64>)> {
    Ok((
        momentum_gradient(spec, &p.z, &p.y)?,
        state_force(spec, &p.z, &p.y)?,
    ))
}

#[derive(Debug, Clone)]
pub struct HamiltonRun {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub initial_energy: f64,
    /// `max_t |H(z(t), y(t)) - H(z0, y0)|`.
    pub max_energy_drift: f64,
}

/// RK4 on the `2n`-dimensional Hamiltonian system.
///
/// Growing momenta are common away from the `y = 0` manifold; a non-finite
/// state or an exponent past [`MAX_EXPONENT`] aborts with [`Error::BlowUp`]
/// carrying `(z, y)` concatenated.
pub fn integrate_hamilton(
    spec: &GeneratorSpec,
    p0: &PhasePoint,
    t_end: f64,
    dt: f64,
) -> Result<HamiltonRun> {
    check_phase(spec, &p0.z, &p0.y)?;
    if !(t_end > 0.0 && dt > 0.0 && dt <= t_end) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < dt <= t_end, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let n = spec.dimension();
    let field = |x: &[f64]| -> Result<Vec<f64>> {
        let (z, y) = x.split_at(n);
        let mut out = momentum_gradient(spec, z, y)?;
        out.extend(state_force(spec, z, y)?);
        Ok(out)
    };
    let h0 = hamiltonian(spec, &p0.z, &p0.y)?;
    let n_steps = step_count(t_end, dt);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut points = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    points.push(p0.clone());
    let mut x: Vec<f64> = p0.z.iter().chain(&p0.y).copied().collect();
    let mut t = 0.0;
    let mut drift = 0.0_f64;
    for k in 1..=n_steps {
        let t_next = grid_time(k, n_steps, t_end, dt);
        let blow_up = |x: Vec<f64>| Error::BlowUp { t, last_state: x };
        let next = match rk4_step(&field, &x, t_next - t) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            Ok(_) | Err(Error::MomentumOverflow { .. }) | Err(Error::Domain(_)) => {
                return Err(blow_up(x))
            }
            Err(e) => return Err(e),
        };
        let (z, y) = next.split_at(n);
        let h = match hamiltonian(spec, z, y) {
            Ok(h) => h,
            Err(Error::MomentumOverflow { .. }) | Err(Error::Domain(_)) => return Err(blow_up(x)),
            Err(e) => return Err(e),
        };
        drift = drift.max((h - h0).abs());
        points.push(PhasePoint::new(z.to_vec(), y.to_vec()));
        x = next;
        t = t_next;
        times.push(t);
    }
    Ok(HamiltonRun {
        times,
        points,
        initial_energy: h0,
        max_energy_drift: drift,
    })
}

const LEGENDRE_TOL: f64 = 1e-10;
const LEGENDRE_MAX_ITERS: usize = 50;

/// Solves `zdot = dH/dy(z, y)` for `y`.
///
/// Damped Newton from `y = 0` on the convex function `H(z, y) - y.zdot`.
/// Velocities outside the attainable cone (the objective is unbounded below)
/// end in [`Error::NoConvergence`].
pub fn legendre_momentum(spec: &GeneratorSpec, z: &[f64], zdot: &[f64]) -> Result<Vec<f64>> {
    check_dim(spec.dimension(), z.len())?;
    check_dim(spec.dimension(), zdot.len())?;
    let n = z.len();
    let scale = 1.0 + zdot.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let objective = |y: &[f64]| -> Option<f64> {
        let h = hamiltonian(spec, z, y).ok()?;
        Some(h - y.iter().zip(zdot).map(|(a, b)| a * b).sum::<f64>())
    };

    let mut y = vec![0.0; n];
    let mut phi = objective(&y).ok_or_else(|| {
        Error::Domain(format!("Hamiltonian undefined at z = {z:?}"))
    })?;
    let mut residual = f64::INFINITY;
    for _ in 0..LEGENDRE_MAX_ITERS {
        let grad: Vec<f64> = momentum_gradient(spec, z, &y)?
            .iter()
            .zip(zdot)
            .map(|(g, v)| g - v)
            .collect();
        residual = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if residual <= LEGENDRE_TOL * scale {
            return Ok(y);
        }
        let hess = momentum_hessian(spec, z, &y)?;
        let rhs = DVector::from_iterator(n, grad.iter().map(|g| -g));
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => hess
                .lu()
                .solve(&rhs)
                .ok_or(Error::Singular("Legendre Hessian d2H/dy2"))?,
        };
        if step.iter().any(|s| !s.is_finite()) {
            return Err(Error::Singular("Legendre Hessian d2H/dy2"));
        }
        let slope: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            if let Some(p) = objective(&trial) {
                if p <= phi + 1e-4 * t * slope || (p - phi).abs() <= 1e-15 * phi.abs().max(1.0) {
                    y = trial;
                    phi = p;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "Legendre momentum",
        iterations: LEGENDRE_MAX_ITERS,
        residual,
    })
}

/// `L(z, zdot) = y.zdot - H(z, y)` at the Legendre momentum.
pub fn lagrangian(spec: &GeneratorSpec, z: &[f64], zdot: &[f64]) -> Result<f64> {
    Ok(lagrangian_and_momentum(spec, z, zdot)?.0)
}

pub fn lagrangian_and_momentum(
    spec: &GeneratorSpec,
    z: &[f64],
    zdot: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let y = legendre_momentum(spec, z, zdot)?;
    let h = hamiltonian(spec, z, &y)?;
    let l: f64 = y.iter().zip(zdot).map(|(a, b)| a * b).sum::<f64>() - h;
    // L >= 0 exactly; only rounding can push it below
    Ok((l.max(0.0), y))
}

/// States on the uniform grid `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub t_end: f64,
    pub states: Vec<StateVector>,
}

impl DiscretePath {
    pub fn new(t_end: f64, states: Vec<StateVector>) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon T = {t_end} must be > 0")));
        }
        if states.len() < 2 {
            return Err(Error::InvalidArgument("a path needs at least two nodes".into()));
        }
        let n = states[0].len();
        for s in &states {
            check_dim(n, s.len())?;
        }
        Ok(Self { t_end, states })
    }

    /// Straight line from `a` to `b` with `segments` steps.
    pub fn linear(a: &[f64], b: &[f64], t_end: f64, segments: usize) -> Result<Self> {
        check_dim(a.len(), b.len())?;
        if segments == 0 {
            return Err(Error::InvalidArgument("N must be >= 1".into()));
        }
        let states = (0..=segments)
            .map(|k| {
                let s = k as f64 / segments as f64;
                a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
            })
            .collect();
        Self::new(t_end, states)
    }

    pub fn segments(&self) -> usize {
        self.states.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.segments() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.states.len()).map(|k| k as f64 * h).collect()
    }

    pub fn to_trajectory(&self) -> crate::Trajectory {
        crate::Trajectory {
            times: self.times(),
            states: self.states.clone(),
        }
    }
}

/// Where the Lagrangian is evaluated on each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `L(z_k, v_k)`. First order: biases the OU action by about `-dt/4`.
    LeftEndpoint,
    /// `L((z_k + z_{k+1}) / 2, v_k)`. Second order.
    #[default]
    Midpoint,
}

impl Quadrature {
    fn position(self, a: &[f64], b: &[f64]) -> Vec<f64> {
        match self {
            Quadrature::LeftEndpoint => a.to_vec(),
            Quadrature::Midpoint => a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect(),
        }
    }

    /// Weight of `dL/dx` on the segment's left and right node.
    fn weights(self) -> (f64, f64) {
        match self {
            Quadrature::LeftEndpoint => (1.0, 0.0),
            Quadrature::Midpoint => (0.5, 0.5),
        }
    }
}

fn segment_velocity(a: &[f64], b: &[f64], h: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (y - x) / h).collect()
}

/// Discrete action `sum_k L(x_k, (z_{k+1} - z_k) / dt) dt` with midpoint `x_k`.
pub fn path_action(spec: &GeneratorSpec, path: &DiscretePath) -> Result<f64> {
    path_action_with(spec, path, Quadrature::Midpoint)
}

pub fn path_action_with(
    spec: &GeneratorSpec,
    path: &DiscretePath,
    quadrature: Quadrature,
) -> Result<f64> {
    check_dim(spec.dimension(), path.states[0].len())?;
    let h = path.step();
    path.states
        .windows(2)
        .map(|w| {
            let x = quadrature.position(&w[0], &w[1]);
            let v = segment_velocity(&w[0], &w[1], h);
            lagrangian(spec, &x, &v).map(|l| l * h)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Stop once the sup-norm of the action gradient is below this.
    pub gtol: f64,
    pub max_iters: usize,
    /// Relative finite-difference step for `dL/dz` and `dL/dzdot`.
    pub fd_step: f64,
    pub quadrature: Quadrature,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-7,
            max_iters: 200_000,
            fd_step: 1e-6,
            quadrature: Quadrature::Midpoint,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub path: DiscretePath,
    pub action: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Central difference of `f` in coordinate `i`, one-sided where `f` fails.
fn partial<F>(f: &F, x: &[f64], i: usize, h: f64, f0: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    match (f(&xp), f(&xm)) {
        (Ok(p), Ok(m)) => Ok((p - m) / (2.0 * h)),
        (Ok(p), Err(_)) => Ok((p - f0) / h),
        (Err(_), Ok(m)) => Ok((f0 - m) / h),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Action gradient with respect to every node (endpoint rows are left zero).
fn action_gradient(
    spec: &GeneratorSpec,
    states: &[StateVector],
    h: f64,
    opts: &MinimizeOptions,
) -> Result<Vec<StateVector>> {
    let n = states[0].len();
    let (wl, wr) = opts.quadrature.weights();
    let mut grad = vec![vec![0.0; n]; states.len()];
    for k in 0..states.len() - 1 {
        let (a, b) = (&states[k], &states[k + 1]);
        let x = opts.quadrature.position(a, b);
        let v = segment_velocity(a, b, h);
        let l0 = lagrangian(spec, &x, &v)?;
        for i in 0..n {
            let hx = opts.fd_step * (1.0 + x[i].abs());
            let hv = opts.fd_step * (1.0 + v[i].abs());
            let lx = partial(&|xx: &[f64]| lagrangian(spec, xx, &v), &x, i, hx, l0)?;
            let lv = partial(&|vv: &[f64]| lagrangian(spec, &x, vv), &v, i, hv, l0)?;
            // segment term h * L(x(a, b), (b - a) / h)
            grad[k][i] += wl * h * lx - lv;
            grad[k + 1][i] += wr * h * lx + lv;
        }
    }
    let last = grad.len() - 1;
    grad[0].fill(0.0);
    grad[last].fill(0.0);
    Ok(grad)
}

fn sup_norm(g: &[StateVector]) -> f64 {
    g.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Minimizes the discrete action over paths with pinned endpoints.
///
/// Steepest descent with Armijo backtracking from a straight-line guess. The
/// gradient comes from central differences of `L`. Trial paths with an
/// unattainable segment velocity are rejected like any failed step.
pub fn minimize_action(
    spec: &GeneratorSpec,
    z_start: &[f64],
    z_end: &[f64],
    t_end: f64,
    segments: usize,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    spec.check_state(z_start)?;
    spec.check_state(z_end)?;
    let mut path = DiscretePath::linear(z_start, z_end, t_end, segments)?;
    let h = path.step();
    let action_of = |states: &[StateVector]| -> Result<f64> {
        let p = DiscretePath {
            t_end,
            states: states.to_vec(),
        };
        path_action_with(spec, &p, opts.quadrature)
    };
    let mut action = action_of(&path.states)?;
    let mut alpha = 1.0;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let grad = action_gradient(spec, &path.states, h, opts)?;
        gnorm = sup_norm(&grad);
        if gnorm <= opts.gtol {
            break;
        }
        let g2: f64 = grad.iter().flatten().map(|v| v * v).sum();
        let mut accepted = false;
        let mut any_feasible = false;
        for _ in 0..80 {
            let trial: Vec<StateVector> = path
                .states
                .iter()
                .zip(&grad)
                .map(|(z, g)| z.iter().zip(g).map(|(a, b)| a - alpha * b).collect())
                .collect();
            match action_of(&trial) {
                Ok(s) => {
                    any_feasible = true;
                    if s <= action - 1e-4 * alpha * g2 {
                        path.states = trial;
                        action = s;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::NoConvergence { .. }) | Err(Error::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if !any_feasible {
                return Err(Error::NoConvergence {
                    what: "least-action line search (no attainable trial path)",
                    iterations,
                    residual: gnorm,
                });
            }
            // no further decrease resolvable at this precision
            break;
        }
        alpha *= 2.0;
    }
    Ok(MinimizeResult {
        converged: gnorm <= opts.gtol,
        path,
        action,
        iterations,
        gradient_norm: gnorm,
    })
}
