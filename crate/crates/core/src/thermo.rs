//! Entropy-balance bookkeeping for the deterministic limit.
//!
//! For a potential `phi` the rate of entropy change `-dphi/dt = -F.grad phi`
//! splits into
//!
//! ```text
//! change = production - mechanical drive - chemical drive + chemomechanical exchange
//! production = A D^-1 A + sum_l (R_l - R_-l) ln(R_l / R_-l)
//! mech drive = (A + D grad) D^-1 (A + D grad)
//! chem drive = sum_l (R_l - R_-l) ln[(R_l / R_-l) e^{nu_l.grad}]
//! exchange   = A.grad + grad D grad
//! ```
//!
//! with one term per reversible pair. The identity holds for any `phi`; it is
//! checked, not assumed. `D^-1` is the pseudo-inverse, which requires the
//! drift to lie in the range of `D`.
//!
//! The second part is the dissipation split `dphi/dt = -sigma1 - sigma2`
//! and the family of dissipative extensions `F + (D - M) grad phi`.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::determlimit::vector_field;
use crate::error::{check_dim, Error, Result};
use crate::model::{GeneratorSpec, StateVector};
use crate::quasipotential::Potential;
use crate::trajectory::Trajectory;

const RANGE_TOL: f64 = 1e-10;
/// Potential-condition residual above which the sinh form is refused.
pub const POTENTIAL_CONDITION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EntropyBalanceTerms {
    pub entropy_change: f64,
    pub entropy_production: f64,
    pub mechanical_drive: f64,
    pub chemical_drive: f64,
    pub chemomechanical_exchange: f64,
}

impl EntropyBalanceTerms {
    /// `change - (production - mech - chem + exchange)`.
    pub fn identity_residual(&self) -> f64 {
        self.entropy_change
            - (self.entropy_production - self.mechanical_drive - self.chemical_drive
                + self.chemomechanical_exchange)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pseudo-inverse of the symmetric PSD diffusion matrix plus the projector
/// onto its range.
fn diffusion_pseudo_inverse(d: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = d.nrows();
    let eig = SymmetricEigen::new(d.clone());
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut inv = DMatrix::zeros(n, n);
    let mut proj = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cutoff {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lam;
            proj += v * v.transpose();
        }
    }
    (inv, proj)
}

fn quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * m[(i, j)] * x[j];
        }
    }
    s
}

/// Splits `-dphi/dt` at `z` into production, drives and exchange.
pub fn entropy_decomposition<P: Potential + ?Sized>(
    spec: &GeneratorSpec,
    candidate: &P,
    z: &[f64],
) -> Result<EntropyBalanceTerms> {
    spec.check_state(z)?;
    let grad = candidate.gradient(z)?;
    check_dim(spec.dimension(), grad.len())?;
    let dd = spec.drift_diffusion();
    let a = dd.drift(z)?;
    let d_grad = dd.apply_diffusion(&grad);

    let (mech_production, mechanical_drive) = if dd.has_drift() || dd.has_diffusion() {
        let (inv, proj) = diffusion_pseudo_inverse(&dd.diffusion);
        let n = a.len();
        let outside = (0..n)
            .map(|i| a[i] - (0..n).map(|j| proj[(i, j)] * a[j]).sum::<f64>())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let a_norm = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if outside > RANGE_TOL * (1.0 + a_norm) {
            return Err(Error::Singular(
                "diffusion matrix (drift has a component outside its range)",
            ));
        }
        let shifted: Vec<f64> = a.iter().zip(&d_grad).map(|(x, y)| x + y).collect();
        (quad(&inv, &a), quad(&inv, &shifted))
    } else {
        (0.0, 0.0)
    };

    let mut chem_production = 0.0;
    let mut chemical_drive = 0.0;
    let mut net_jump = vec![0.0; z.len()];
    for (c, ch) in spec.channels().iter().enumerate() {
        let (fwd, bwd) = ch.rates(z)?;
        if !(fwd > 0.0 && bwd > 0.0) {
            return Err(Error::Domain(format!(
                "channel {c} has a vanishing rate at z = {z:?} (R+ = {fwd}, R- = {bwd})"
            )));
        }
        let flux = fwd - bwd;
        let affinity = (fwd / bwd).ln();
        chem_production += flux * affinity;
        chemical_drive += flux * (affinity + ch.nu_dot(&grad));
        for (v, &n) in net_jump.iter_mut().zip(&ch.nu) {
            *v += f64::from(n) * flux;
        }
    }

    let field: Vec<f64> = a.iter().zip(&net_jump).map(|(x, y)| x + y).collect();
    Ok(EntropyBalanceTerms {
        entropy_change: -dot(&field, &grad),
        entropy_production: mech_production + chem_production,
        mechanical_drive,
        chemical_drive,
        chemomechanical_exchange: dot(&a, &grad) + dot(&grad, &d_grad),
    })
}

/// Mechanical potential `U` with `A = -D grad U`, chemical potential `G`
/// with `ln(R_l / R_-l) = -nu_l.grad G`.
pub struct PotentialPair<'a> {
    pub mechanical: &'a dyn Potential,
    pub chemical: &'a dyn Potential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialResiduals {
    /// `|A + D grad U|_inf`.
    pub mechanical: f64,
    /// `|ln(R_l / R_-l) + nu_l.grad G|` per channel pair.
    pub chemical: Vec<f64>,
}

impl PotentialResiduals {
    pub fn max(&self) -> f64 {
        self.chemical.iter().fold(self.mechanical, |m, &v| m.max(v))
    }
}

pub fn check_potential_conditions(
    spec: &GeneratorSpec,
    pair: &PotentialPair<'_>,
    z: &[f64],
) -> Result<PotentialResiduals> {
    spec.check_state(z)?;
    let dd = spec.drift_diffusion();
    let mechanical = if dd.has_drift() || dd.has_diffusion() {
        let grad_u = pair.mechanical.gradient(z)?;
        check_dim(z.len(), grad_u.len())?;
        let a = dd.drift(z)?;
        let d_grad = dd.apply_diffusion(&grad_u);
        a.iter()
            .zip(&d_grad)
            .fold(0.0_f64, |m, (x, y)| m.max((x + y).abs()))
    } else {
        0.0
    };
    let chemical = if spec.channels().is_empty() {
        vec![]
    } else {
        let grad_g = pair.chemical.gradient(z)?;
        check_dim(z.len(), grad_g.len())?;
        spec.channels()
            .iter()
            .enumerate()
            .map(|(c, ch)| {
                let (fwd, bwd) = ch.rates(z)?;
                if !(fwd > 0.0 && bwd > 0.0) {
                    return Err(Error::Domain(format!(
                        "channel {c} has a vanishing rate at z = {z:?}"
                    )));
                }
                Ok(((fwd / bwd).ln() + ch.nu_dot(&grad_g)).abs())
            })
            .collect::<Result<_>>()?
    };
    Ok(PotentialResiduals {
        mechanical,
        chemical,
    })
}

/// `-[D grad U + sum_l 2 nu_l sqrt(R_l R_-l) sinh(nu_l.grad G / 2)]`.
///
/// Refuses states where the potential conditions fail beyond
/// [`POTENTIAL_CONDITION_TOL`]; where they hold this equals `F(z)`.
pub fn detailed_balance_field(
    spec: &GeneratorSpec,
    pair: &PotentialPair<'_>,
    z: &[f64],
) -> Result<StateVector> {
    let residuals = check_potential_conditions(spec, pair, z)?;
    if residuals.max() > POTENTIAL_CONDITION_TOL {
        return Err(Error::Domain(format!(
            "potential conditions violated at z = {z:?} (residual {:.3e})",
            residuals.max()
        )));
    }
    let dd = spec.drift_diffusion();
    let mut out = if dd.has_diffusion() {
        dd.apply_diffusion(&pair.mechanical.gradient(z)?)
    } else {
        vec![0.0; z.len()]
    };
    if !spec.channels().is_empty() {
        let grad_g = pair.chemical.gradient(z)?;
        for ch in spec.channels() {
            let (fwd, bwd) = ch.rates(z)?;
            let geometric = (fwd * bwd).sqrt();
            let s = 2.0 * geometric * (0.5 * ch.nu_dot(&grad_g)).sinh();
            for (o, &n) in out.iter_mut().zip(&ch.nu) {
                *o += f64::from(n) * s;
            }
        }
    }
    for o in &mut out {
        *o = -*o;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CitSigma {
    /// `sum over both directions R (e^{nu.grad} - nu.grad - 1) >= 0`.
    pub sigma1: f64,
    /// `-[zdot - sum_l nu_l (R_l - R_-l) - A - D grad].grad`.
    pub sigma2: f64,
    /// `zdot . grad`.
    pub dphi_dt: f64,
}

impl CitSigma {
    /// `dphi/dt + sigma1 + sigma2`; zero when `phi` solves the stationary
    /// Hamilton-Jacobi equation.
    pub fn balance_residual(&self) -> f64 {
        self.dphi_dt + self.sigma1 + self.sigma2
    }
}

pub fn cit_sigma<P: Potential + ?Sized>(
    spec: &GeneratorSpec,
    candidate: &P,
    z: &[f64],
    zdot: &[f64],
) -> Result<CitSigma> {
    spec.check_state(z)?;
    check_dim(z.len(), zdot.len())?;
    let grad = candidate.gradient(z)?;
    check_dim(z.len(), grad.len())?;
    let dd = spec.drift_diffusion();
    let a = dd.drift(z)?;
    let d_grad = dd.apply_diffusion(&grad);
    let mut sigma1 = 0.0;
    let mut excess: Vec<f64> = (0..z.len()).map(|i| zdot[i] - a[i] - d_grad[i]).collect();
    for ch in spec.channels() {
        let (fwd, bwd) = ch.rates(z)?;
        let x = ch.nu_dot(&grad);
        sigma1 += fwd * (x.exp_m1() - x) + bwd * ((-x).exp_m1() + x);
        for (e, &n) in excess.iter_mut().zip(&ch.nu) {
            *e -= f64::from(n) * (fwd - bwd);
        }
    }
    Ok(CitSigma {
        sigma1,
        sigma2: -dot(&excess, &grad),
        dphi_dt: dot(zdot, &grad),
    })
}

/// `F(z) + (D - M)^T grad phi(z)` for a symmetric PSD dissipation matrix `M`.
/// `M = D` gives back `F`.
pub fn cit_extension_field<P: Potential + ?Sized>(
    spec: &GeneratorSpec,
    candidate: &P,
    dissipation: &DMatrix<f64>,
    z: &[f64],
) -> Result<StateVector> {
    let n = spec.dimension();
    check_dissipation_matrix(dissipation, n)?;
    let mut f = vector_field(spec, z)?;
    let grad = candidate.gradient(z)?;
    let d = &spec.drift_diffusion().diffusion;
    for (i, fi) in f.iter_mut().enumerate() {
        *fi += (0..n)
            .map(|j| (d[(j, i)] - dissipation[(j, i)]) * grad[j])
            .sum::<f64>();
    }
    Ok(f)
}

pub fn check_dissipation_matrix(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidArgument("dissipation matrix M not symmetric".into()));
            }
        }
    }
    let min = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -1e-10 {
        return Err(Error::InvalidArgument(format!(
            "dissipation matrix M not positive semidefinite (eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub terms: EntropyBalanceTerms,
    pub sigma: CitSigma,
}

/// Balance terms and sigma split along a deterministic trajectory (`zdot = F`).
pub fn entropy_ledger<P: Potential + ?Sized>(
    spec: &GeneratorSpec,
    candidate: &P,
    trajectory: &Trajectory,
) -> Result<Vec<LedgerRow>> {
    trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(&t, z)| {
            let f = vector_field(spec, z)?;
            Ok(LedgerRow {
                t,
                terms: entropy_decomposition(spec, candidate, z)?,
                sigma: cit_sigma(spec, candidate, z, &f)?,
            })
        })
        .collect()
}

pub fn write_ledger_csv<W: Write>(rows: &[LedgerRow], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "t,entropy_change,production,mech_drive,chem_drive,exchange,sigma1,sigma2"
    )?;
    for r in rows {
        let e = &r.terms;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t,
            e.entropy_change,
            e.entropy_production,
            e.mechanical_drive,
            e.chemical_drive,
            e.chemomechanical_exchange,
            r.sigma.sigma1,
            r.sigma.sigma2
        )?;
    }
    Ok(())
}
