//! Flag value parsing and error classification.

use std::fmt;
use std::path::Path;

use ldpkit::simulate::{Axis, BinSpec};

/// A problem with the user's input rather than with the numerics.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 2 for invalid input, 3 for numerical failure.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<ldpkit::Error>() {
            return if err.is_validation() { 2 } else { 3 };
        }
    }
    3
}

pub fn vector(text: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("{what}: {s:?} is not a number")))
        })
        .collect()
}

/// `lo:hi:n` as `n` evenly spaced points including both ends.
pub fn grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || usage(format!("grid {text:?} must be lo:hi:n"));
    let [lo, hi, n] = parts[..] else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !(lo <= hi) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect())
}

/// Tensor product of per-dimension grids separated by `;`.
pub fn tensor_grid(text: &str, dimension: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let axes = text.split(';').map(grid).collect::<anyhow::Result<Vec<_>>>()?;
    if axes.len() != dimension {
        return Err(usage(format!(
            "grid has {} axes but the model has dimension {dimension}",
            axes.len()
        )));
    }
    let mut points = vec![vec![]];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

pub fn bins(text: Option<&str>) -> anyhow::Result<BinSpec> {
    let Some(text) = text else {
        return Ok(BinSpec::default());
    };
    if let Ok(n) = text.trim().parse::<usize>() {
        if n == 0 {
            return Err(usage("bins must be >= 1"));
        }
        return Ok(BinSpec::Auto { bins: n });
    }
    let axes = text
        .split(';')
        .map(|a| {
            let bad = || usage(format!("bin axis {a:?} must be lo:hi:bins"));
            let parts: Vec<&str> = a.split(':').collect();
            let [lo, hi, n] = parts[..] else {
                return Err(bad());
            };
            Axis::new(
                lo.trim().parse().map_err(|_| bad())?,
                hi.trim().parse().map_err(|_| bad())?,
                n.trim().parse().map_err(|_| bad())?,
            )
            .map_err(anyhow::Error::from)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(BinSpec::Fixed(axes))
}

pub fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}
