//! Monte Carlo sampling of the mesoscopic process at noise level `epsilon`,
//! and empirical rate functions from terminal-state ensembles.
//!
//! Jumps use Gillespie's algorithm with propensities `R(z) / epsilon` and
//! jumps `epsilon * nu`. The drift-diffusion part uses Euler-Maruyama with
//! noise covariance `2 epsilon D dt`. When both are present each `dt` window
//! is split as half a diffusion step, an exact jump evolution over `dt` with
//! the diffusing coordinates frozen, and another half diffusion step.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::determlimit::{grid_time, step_count};
use crate::error::{check_dim, Error, Result};
use crate::model::{GeneratorSpec, RateLaw, StateVector};
use crate::trajectory::Trajectory;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_MIN_COUNT: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub epsilon: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(epsilon: f64, t_end: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            epsilon,
            t_end,
            dt,
            n_paths,
            seed,
            record_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {} must be > 0",
                self.epsilon
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end = {} must be > 0", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} must lie in (0, t_end]",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be >= 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidArgument("record_stride must be >= 1".into()));
        }
        if self.epsilon > 1.0 {
            log::warn!("epsilon = {} > 1; the small-noise picture may not apply", self.epsilon);
        }
        Ok(())
    }
}

struct Channel {
    nu: Vec<f64>,
    forward: RateLaw,
    backward: RateLaw,
}

/// Per-spec precomputation shared by all paths.
struct Sampler {
    n: usize,
    epsilon: f64,
    offset: Vec<f64>,
    /// Row-major `A1`.
    matrix: Vec<f64>,
    /// Row-major lower-triangular noise factor scaled by `sqrt(2 epsilon)`.
    noise: Vec<f64>,
    has_drift: bool,
    has_noise: bool,
    channels: Vec<Channel>,
}

impl Sampler {
    fn new(spec: &GeneratorSpec, epsilon: f64) -> Result<Self> {
        let dd = spec.drift_diffusion();
        let n = spec.dimension();
        let c: DMatrix<f64> = dd.noise_factor()?;
        let root = (2.0 * epsilon).sqrt();
        let mut noise = vec![0.0; n * n];
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                noise[i * n + j] = root * c[(i, j)];
                matrix[i * n + j] = dd.matrix[(i, j)];
            }
        }
        Ok(Self {
            n,
            epsilon,
            offset: dd.offset.iter().copied().collect(),
            matrix,
            has_noise: noise.iter().any(|&v| v != 0.0),
            noise,
            has_drift: dd.has_drift(),
            channels: spec
                .channels()
                .iter()
                .map(|ch| Channel {
                    nu: ch.nu.iter().map(|&v| f64::from(v)).collect(),
                    forward: ch.forward.clone(),
                    backward: ch.backward.clone(),
                })
                .collect(),
        })
    }

    fn euler_maruyama(&self, z: &mut [f64], h: f64, rng: &mut ChaCha8Rng, buf: &mut [f64]) {
        let n = self.n;
        if self.has_drift {
            for i in 0..n {
                let mut a = self.offset[i];
                for j in 0..n {
                    a += self.matrix[i * n + j] * z[j];
                }
                buf[i] = a;
            }
            for i in 0..n {
                z[i] += buf[i] * h;
            }
        }
        if self.has_noise {
            let sh = h.sqrt();
            for g in buf.iter_mut() {
                *g = rng.sample(StandardNormal);
            }
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..=i {
                    s += self.noise[i * n + j] * buf[j];
                }
                z[i] += sh * s;
            }
        }
    }

    /// Propensity of moving by `sign * epsilon * nu`, zero if the jump would
    /// push a decreasing coordinate below zero.
    fn propensity(&self, law: &RateLaw, nu: &[f64], sign: f64, z: &[f64]) -> f64 {
        for (&zi, &v) in z.iter().zip(nu) {
            let step = sign * v;
            if step < 0.0 && zi + self.epsilon * step < -1e-9 * self.epsilon {
                return 0.0;
            }
        }
        law.propensity(z) / self.epsilon
    }

    /// Exact jump evolution over `[0, h]` with the current state frozen
    /// between jumps.
    fn ssa(&self, z: &mut [f64], h: f64, rng: &mut ChaCha8Rng, props: &mut [f64]) {
        let mut t = 0.0;
        loop {
            let mut total = 0.0;
            for (k, ch) in self.channels.iter().enumerate() {
                props[2 * k] = self.propensity(&ch.forward, &ch.nu, 1.0, z);
                props[2 * k + 1] = self.propensity(&ch.backward, &ch.nu, -1.0, z);
                total += props[2 * k] + props[2 * k + 1];
            }
            if total <= 0.0 {
                return;
            }
            let tau: f64 = rng.sample::<f64, _>(Exp1) / total;
            t += tau;
            if t > h {
                return;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = props.len() - 1;
            for (k, &p) in props.iter().enumerate() {
                if u < p {
                    pick = k;
                    break;
                }
                u -= p;
            }
            // guard against rounding landing on a zero-propensity channel
            while props[pick] == 0.0 {
                pick -= 1;
            }
            let ch = &self.channels[pick / 2];
            let sign = if pick % 2 == 0 { 1.0 } else { -1.0 };
            for (zi, &v) in z.iter_mut().zip(&ch.nu) {
                *zi += sign * self.epsilon * v;
                // a lattice point that should be exactly zero, off by rounding
                if v != 0.0 && *zi < 0.0 && *zi > -1e-9 * self.epsilon {
                    *zi = 0.0;
                }
            }
        }
    }

    fn advance(&self, z: &mut [f64], h: f64, rng: &mut ChaCha8Rng, scratch: &mut Scratch) {
        let diffusive = self.has_drift || self.has_noise;
        let jumps = !self.channels.is_empty();
        match (diffusive, jumps) {
            (false, false) => {}
            (true, false) => self.euler_maruyama(z, h, rng, &mut scratch.buf),
            (false, true) => self.ssa(z, h, rng, &mut scratch.props),
            (true, true) => {
                self.euler_maruyama(z, 0.5 * h, rng, &mut scratch.buf);
                self.ssa(z, h, rng, &mut scratch.props);
                self.euler_maruyama(z, 0.5 * h, rng, &mut scratch.buf);
            }
        }
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            buf: vec![0.0; self.n],
            props: vec![0.0; 2 * self.channels.len()],
        }
    }
}

struct Scratch {
    buf: Vec<f64>,
    props: Vec<f64>,
}

/// Independent stream for each path: the same `(seed, index)` always yields
/// the same path regardless of how many paths are requested.
fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn prepare(spec: &GeneratorSpec, z0: &[f64], cfg: &SimConfig) -> Result<Sampler> {
    cfg.validate()?;
    check_dim(spec.dimension(), z0.len())?;
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite initial state {z0:?}")));
    }
    Sampler::new(spec, cfg.epsilon)
}

/// Samples `cfg.n_paths` trajectories, recording every `record_stride`-th
/// step of the `dt` grid plus the final time.
pub fn simulate_paths(spec: &GeneratorSpec, z0: &[f64], cfg: &SimConfig) -> Result<Vec<Trajectory>> {
    let sampler = prepare(spec, z0, cfg)?;
    let n_steps = step_count(cfg.t_end, cfg.dt);
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|index| {
            let mut rng = path_rng(cfg.seed, index);
            let mut scratch = sampler.scratch();
            let mut z = z0.to_vec();
            let mut tr = Trajectory::with_capacity(n_steps / cfg.record_stride + 2);
            tr.push(0.0, z.clone());
            let mut t = 0.0;
            for k in 1..=n_steps {
                let t_next = grid_time(k, n_steps, cfg.t_end, cfg.dt);
                sampler.advance(&mut z, t_next - t, &mut rng, &mut scratch);
                t = t_next;
                if k % cfg.record_stride == 0 || k == n_steps {
                    tr.push(t, z.clone());
                }
            }
            tr
        })
        .collect();
    Ok(paths)
}

/// States of every path at `cfg.t_end`, without storing trajectories.
///
/// Path `i` here is bit-identical to the last state of path `i` from
/// [`simulate_paths`] with the same configuration.
pub fn simulate_terminal_states(
    spec: &GeneratorSpec,
    z0: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<StateVector>> {
    let sampler = prepare(spec, z0, cfg)?;
    let n_steps = step_count(cfg.t_end, cfg.dt);
    let states = (0..cfg.n_paths)
        .into_par_iter()
        .map(|index| {
            let mut rng = path_rng(cfg.seed, index);
            let mut scratch = sampler.scratch();
            let mut z = z0.to_vec();
            let mut t = 0.0;
            for k in 1..=n_steps {
                let t_next = grid_time(k, n_steps, cfg.t_end, cfg.dt);
                sampler.advance(&mut z, t_next - t, &mut rng, &mut scratch);
                t = t_next;
            }
            z
        })
        .collect();
    Ok(states)
}

/// Per-coordinate sample mean and standard error of the mean.
pub fn ensemble_mean(states: &[StateVector]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = states.first() else {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    };
    let n = first.len();
    let m = states.len() as f64;
    let mut mean = vec![0.0; n];
    for s in states {
        check_dim(n, s.len())?;
        for (a, v) in mean.iter_mut().zip(s) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; n];
    for s in states {
        for ((a, v), mu) in var.iter_mut().zip(s).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let denom = (m - 1.0).max(1.0);
    let se = var.iter().map(|v| (v / denom / m).sqrt()).collect();
    Ok((mean, se))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) || bins == 0 {
            return Err(Error::InvalidArgument(format!(
                "axis needs lo < hi and bins >= 1, got [{lo}, {hi}] with {bins} bins"
            )));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    /// Bin of `x`; the upper edge belongs to the last bin.
    pub fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let k = ((x - self.lo) / (self.hi - self.lo) * self.bins as f64).floor() as usize;
        Some(k.min(self.bins - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BinSpec {
    /// `bins` per dimension spanning the sample range padded by 5%.
    Auto { bins: usize },
    Fixed(Vec<Axis>),
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::Auto { bins: DEFAULT_BINS }
    }
}

impl BinSpec {
    fn resolve(&self, states: &[StateVector], n: usize) -> Result<Vec<Axis>> {
        match self {
            BinSpec::Fixed(axes) => {
                check_dim(n, axes.len())?;
                Ok(axes.clone())
            }
            BinSpec::Auto { bins } => (0..n)
                .map(|i| {
                    let (lo, hi) = states
                        .iter()
                        .map(|s| s[i])
                        .filter(|v| v.is_finite())
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                            (a.min(v), b.max(v))
                        });
                    if !lo.is_finite() {
                        return Err(Error::InvalidArgument("no finite samples".into()));
                    }
                    let span = hi - lo;
                    let pad = if span > 0.0 { 0.05 * span } else { 0.5 * lo.abs().max(1.0) };
                    Axis::new(lo - pad, hi + pad, *bins)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHistogram {
    pub epsilon: f64,
    pub time: f64,
    pub axes: Vec<Axis>,
    /// Row-major counts, first axis slowest.
    pub counts: Vec<u64>,
    pub n_paths: u64,
    pub out_of_range: u64,
}

impl EnsembleHistogram {
    pub fn empty(epsilon: f64, time: f64, axes: Vec<Axis>) -> Self {
        let size = axes.iter().map(|a| a.bins).product();
        Self {
            epsilon,
            time,
            axes,
            counts: vec![0; size],
            n_paths: 0,
            out_of_range: 0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    fn flat_index(&self, z: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (a, &x) in self.axes.iter().zip(z) {
            idx = idx * a.bins + a.index(x)?;
        }
        Some(idx)
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (o, a) in out.iter_mut().zip(&self.axes).rev() {
            *o = flat % a.bins;
            flat /= a.bins;
        }
        out
    }

    pub fn bin_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.axes)
            .map(|(k, a)| a.center(k))
            .collect()
    }

    pub fn bin_volume(&self) -> f64 {
        self.axes.iter().map(Axis::width).product()
    }

    pub fn add(&mut self, z: &[f64]) {
        self.n_paths += 1;
        match self.flat_index(z) {
            Some(k) => self.counts[k] += 1,
            None => self.out_of_range += 1,
        }
    }

    /// Histogram of the union of two disjoint samples on the same grid.
    pub fn merge(mut self, other: &Self) -> Result<Self> {
        if self.axes != other.axes || self.epsilon != other.epsilon || self.time != other.time {
            return Err(Error::InvalidArgument(
                "histograms differ in grid, epsilon or time".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_paths += other.n_paths;
        self.out_of_range += other.out_of_range;
        Ok(self)
    }

    /// Bins the given states with a parallel reduction.
    pub fn from_states(
        states: &[StateVector],
        epsilon: f64,
        time: f64,
        bins: &BinSpec,
    ) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::InvalidArgument("empty path set".into()));
        };
        let n = first.len();
        if let Some(bad) = states.iter().find(|s| s.len() != n) {
            check_dim(n, bad.len())?;
        }
        let axes = bins.resolve(states, n)?;
        let empty = Self::empty(epsilon, time, axes);
        let hist = states
            .par_chunks(4096)
            .fold(
                || empty.clone(),
                |mut h, chunk| {
                    chunk.iter().for_each(|z| h.add(z));
                    h
                },
            )
            .reduce(
                || empty.clone(),
                |a, b| a.merge(&b).expect("same grid by construction"),
            );
        Ok(hist)
    }

    /// `z1_center,...,zn_center,count` for every bin.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.dimension()).map(|i| format!("z{i}_center")).collect();
        writeln!(w, "{},count", header.join(","))?;
        for (k, &c) in self.counts.iter().enumerate() {
            let center: Vec<String> = self.bin_center(k).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{c}", center.join(","))?;
        }
        Ok(())
    }
}

/// Histogram of the paths' (interpolated) states at `time`.
pub fn ensemble_histogram(
    paths: &[Trajectory],
    epsilon: f64,
    time: f64,
    bins: &BinSpec,
) -> Result<EnsembleHistogram> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("empty path set".into()));
    }
    let states = paths
        .par_iter()
        .map(|p| p.state_at(time))
        .collect::<Result<Vec<_>>>()?;
    EnsembleHistogram::from_states(&states, epsilon, time, bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub z: Vec<f64>,
    pub phi_hat: f64,
    pub count: u64,
}

/// `phi_hat = -epsilon ln(count / (n_paths * volume))` on bins holding at
/// least `min_count` samples, shifted so the smallest value is 0.
pub fn empirical_rate_function(hist: &EnsembleHistogram, min_count: u64) -> Result<Vec<RatePoint>> {
    if hist.n_paths == 0 {
        return Err(Error::InvalidArgument("empty histogram".into()));
    }
    let norm = hist.n_paths as f64 * hist.bin_volume();
    let mut points: Vec<RatePoint> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0 && c >= min_count)
        .map(|(k, &c)| RatePoint {
            z: hist.bin_center(k),
            phi_hat: -hist.epsilon * (c as f64 / norm).ln(),
            count: c,
        })
        .collect();
    let Some(min) = points.iter().map(|p| p.phi_hat).reduce(f64::min) else {
        return Err(Error::InvalidArgument(format!(
            "no bin holds at least {min_count} samples"
        )));
    };
    points.iter_mut().for_each(|p| p.phi_hat -= min);
    Ok(points)
}

/// `z1,...,zn,phi_hat`.
pub fn write_rate_function_csv<W: Write>(points: &[RatePoint], mut w: W) -> io::Result<()> {
    let n = points.first().map_or(1, |p| p.z.len());
    let header: Vec<String> = (1..=n).map(|i| format!("z{i}")).collect();
    writeln!(w, "{},phi_hat", header.join(","))?;
    for p in points {
        let z: Vec<String> = p.z.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", z.join(","), p.phi_hat)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn ou() -> GeneratorSpec {
        GeneratorSpec::new(ModelConfig::ornstein_uhlenbeck(1.0, 1.0)).unwrap()
    }

    fn birth_death() -> GeneratorSpec {
        GeneratorSpec::new(ModelConfig::birth_death(2.0, 1.0)).unwrap()
    }

    #[test]
    fn static_model_is_constant() {
        let spec = GeneratorSpec::new(ModelConfig {
            dimension: 1,
            ..ModelConfig::ornstein_uhlenbeck(0.0, 0.0)
        })
        .unwrap();
        let paths = simulate_paths(&spec, &[1.0], &SimConfig::new(0.1, 1.0, 0.1, 3, 7)).unwrap();
        for p in &paths {
            assert_eq!(p.len(), 11);
            assert!(p.states.iter().all(|s| s == &vec![1.0]));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.0, 1.0, 0.1, 1, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 2.0, 1, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 0.1, 0, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 0.1, 1, 0).with_stride(0).validate().is_err());
        assert!(simulate_paths(&ou(), &[1.0, 2.0], &SimConfig::new(0.1, 1.0, 0.1, 1, 0)).is_err());
    }

    #[test]
    fn ou_mean_matches_closed_form() {
        let cfg = SimConfig::new(0.05, 5.0, 0.01, 20_000, 11);
        let states = simulate_terminal_states(&ou(), &[1.0], &cfg).unwrap();
        let (mean, se) = ensemble_mean(&states).unwrap();
        assert!((mean[0] - (-5.0_f64).exp()).abs() < 3.0 * se[0], "{mean:?} {se:?}");
        let var: f64 = states.iter().map(|s| (s[0] - mean[0]).powi(2)).sum::<f64>()
            / (states.len() - 1) as f64;
        let exact = 0.05 * (1.0 - (-10.0_f64).exp());
        assert!((var / exact - 1.0).abs() < 0.05, "{var} vs {exact}");
    }

    #[test]
    fn birth_death_mean_tracks_ode() {
        let cfg = SimConfig::new(0.01, 5.0, 0.1, 4_000, 3);
        let states = simulate_terminal_states(&birth_death(), &[1.0], &cfg).unwrap();
        let (mean, se) = ensemble_mean(&states).unwrap();
        let ode = 2.0 - (-5.0_f64).exp();
        assert!((mean[0] - ode).abs() < 3.0 * se[0], "{mean:?} {se:?}");
    }

    #[test]
    fn reproducible_and_prefix_stable() {
        let cfg = SimConfig::new(0.1, 1.0, 0.05, 8, 99).with_stride(4);
        let a = simulate_paths(&birth_death(), &[1.0], &cfg).unwrap();
        let b = simulate_paths(&birth_death(), &[1.0], &cfg).unwrap();
        assert_eq!(a, b);
        let more = simulate_paths(&birth_death(), &[1.0], &SimConfig { n_paths: 12, ..cfg }).unwrap();
        assert_eq!(a[..], more[..8]);
        assert_eq!(a[0].times, vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        let terminal = simulate_terminal_states(&birth_death(), &[1.0], &cfg).unwrap();
        for (p, z) in a.iter().zip(&terminal) {
            assert_eq!(p.last_state().unwrap(), z);
        }
    }

    #[test]
    fn pure_jump_mass_action_stays_nonnegative() {
        let spec = GeneratorSpec::new(ModelConfig::birth_death(0.05, 3.0)).unwrap();
        let paths = simulate_paths(&spec, &[0.5], &SimConfig::new(0.25, 5.0, 0.05, 50, 1)).unwrap();
        assert!(paths.iter().flat_map(|p| &p.states).all(|s| s[0] >= 0.0));
    }

    #[test]
    fn hybrid_runs_and_is_reproducible() {
        let spec = GeneratorSpec::new(ModelConfig::hybrid_ou_birth_death(1.0, 1.0, 2.0, 1.0)).unwrap();
        let cfg = SimConfig::new(0.05, 2.0, 0.01, 16, 5);
        let a = simulate_terminal_states(&spec, &[0.5, 1.0], &cfg).unwrap();
        assert_eq!(a, simulate_terminal_states(&spec, &[0.5, 1.0], &cfg).unwrap());
        assert!(a.iter().all(|s| s[1] >= 0.0));
    }

    #[test]
    fn histogram_of_constant_paths() {
        let mut tr = Trajectory::default();
        tr.push(0.0, vec![1.0]);
        tr.push(1.0, vec![1.0]);
        let paths = vec![tr; 100];
        let h = ensemble_histogram(&paths, 0.1, 0.5, &BinSpec::default()).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(*h.counts.iter().max().unwrap(), 100);
        let rf = empirical_rate_function(&h, DEFAULT_MIN_COUNT).unwrap();
        assert_eq!(rf.len(), 1);
        assert_eq!(rf[0].phi_hat, 0.0);
        assert!(ensemble_histogram(&[], 0.1, 0.5, &BinSpec::default()).is_err());
    }

    #[test]
    fn out_of_range_is_counted() {
        let states: Vec<StateVector> = vec![vec![-2.0], vec![0.1], vec![0.2], vec![3.0]];
        let axes = vec![Axis::new(0.0, 1.0, 4).unwrap()];
        let h = EnsembleHistogram::from_states(&states, 0.1, 1.0, &BinSpec::Fixed(axes)).unwrap();
        assert_eq!(h.out_of_range, 2);
        assert_eq!(h.counts.iter().sum::<u64>() + h.out_of_range, h.n_paths);
        assert!(empirical_rate_function(&h, 5).is_err());
    }

    #[test]
    fn ou_histogram_mode_near_zero() {
        let cfg = SimConfig::new(0.05, 5.0, 0.01, 20_000, 2);
        let states = simulate_terminal_states(&ou(), &[1.0], &cfg).unwrap();
        let h = EnsembleHistogram::from_states(&states, 0.05, 5.0, &BinSpec::Auto { bins: 32 })
            .unwrap();
        let (mode, _) = h.counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap();
        let center = h.bin_center(mode)[0];
        assert!(center.abs() <= 1.5 * h.axes[0].width(), "{center}");
    }

    #[test]
    fn two_dimensional_csv() {
        let states: Vec<StateVector> = vec![vec![0.1, 0.9], vec![0.6, 0.1]];
        let axes = vec![Axis::new(0.0, 1.0, 2).unwrap(), Axis::new(0.0, 1.0, 2).unwrap()];
        let h = EnsembleHistogram::from_states(&states, 0.1, 1.0, &BinSpec::Fixed(axes)).unwrap();
        assert_eq!(h.counts, vec![0, 1, 1, 0]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "z1_center,z2_center,count\n0.25,0.25,0\n0.25,0.75,1\n0.75,0.25,1\n0.75,0.75,0\n"
        );
        let rf = empirical_rate_function(&h, 1).unwrap();
        let mut buf = Vec::new();
        write_rate_function_csv(&rf, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("z1,z2,phi_hat\n"));
    }

    proptest! {
        #[test]
        fn merge_is_union(
            a in prop::collection::vec(-2.0f64..2.0, 0..60),
            b in prop::collection::vec(-2.0f64..2.0, 0..60),
            c in prop::collection::vec(-2.0f64..2.0, 0..60),
        ) {
            let axes = vec![Axis::new(-1.5, 1.5, 7).unwrap()];
            let build = |xs: &[f64]| {
                let mut h = EnsembleHistogram::empty(0.1, 1.0, axes.clone());
                xs.iter().for_each(|&x| h.add(&[x]));
                h
            };
            let (ha, hb, hc) = (build(&a), build(&b), build(&c));
            let all: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
            let left = ha.clone().merge(&hb).unwrap().merge(&hc).unwrap();
            let right = ha.clone().merge(&hb.clone().merge(&hc).unwrap()).unwrap();
            let swapped = hb.merge(&ha).unwrap().merge(&hc).unwrap();
            prop_assert_eq!(&left, &build(&all));
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(&left, &swapped);
        }
    }
}
