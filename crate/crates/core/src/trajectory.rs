//! Time-indexed state sequences shared by the samplers and integrators.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::model::StateVector;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, t: f64, z: StateVector) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.states.push(z);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn last_state(&self) -> Option<&StateVector> {
        self.states.last()
    }

    /// State at `t`, linearly interpolated between recorded points.
    pub fn state_at(&self, t: f64) -> Result<StateVector> {
        let (Some(&t0), Some(&t1)) = (self.times.first(), self.times.last()) else {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        };
        let slack = 1e-9 * t1.abs().max(1.0);
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside trajectory range [{t0}, {t1}]"
            )));
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return Ok(self.states[0].clone());
        }
        if k == self.times.len() {
            return Ok(self.states[k - 1].clone());
        }
        let (ta, tb) = (self.times[k - 1], self.times[k]);
        if t == ta {
            return Ok(self.states[k - 1].clone());
        }
        let w = (t - ta) / (tb - ta);
        Ok(self.states[k - 1]
            .iter()
            .zip(&self.states[k])
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// Writes `t,z1,...,zn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for i in 1..=n {
            write!(w, ",z{i}")?;
        }
        writeln!(w)?;
        for (t, z) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in z {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
