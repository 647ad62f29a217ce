//! Trapping potentials sampled on a grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Named potential presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// V = -nu (nu + 1) / w^2 sech^2(|x| / w); bound levels -(nu - n)^2 / w^2 in 1-D.
    PoschlTeller { nu: f64, width: f64 },
    /// V = -depth exp(-|x|^2 / w^2).
    GaussianWell { depth: f64, width: f64 },
    Zero,
}

impl PotentialSpec {
    pub fn eval(&self, r2: f64) -> f64 {
        match *self {
            PotentialSpec::PoschlTeller { nu, width } => {
                let s = 1.0 / (r2.sqrt() / width).cosh();
                -nu * (nu + 1.0) / (width * width) * s * s
            }
            PotentialSpec::GaussianWell { depth, width } => -depth * (-r2 / (width * width)).exp(),
            PotentialSpec::Zero => 0.0,
        }
    }

    /// Exact 1-D bound-state energies when known in closed form.
    pub fn analytic_levels_1d(&self) -> Option<Vec<f64>> {
        match *self {
            PotentialSpec::PoschlTeller { nu, width } => {
                let mut out = Vec::new();
                let mut n = 0.0;
                while nu - n > 0.0 {
                    out.push(-(nu - n) * (nu - n) / (width * width));
                    n += 1.0;
                }
                Some(out)
            }
            PotentialSpec::Zero => Some(Vec::new()),
            PotentialSpec::GaussianWell { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Potential {
    pub spec: PotentialSpec,
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl Potential {
    pub fn new(spec: PotentialSpec, grid: &Arc<Grid>) -> Result<Potential> {
        let values: Vec<f64> = grid.radius_squared().into_iter().map(|r2| spec.eval(r2)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("potential is not finite on the grid"));
        }
        let pot = Potential {
            spec,
            grid: grid.clone(),
            values,
        };
        let edge = pot.boundary_max();
        if edge > 1e-10 {
            return Err(Error::invalid(format!(
                "potential reaches {edge:.3e} at the box boundary; enlarge Lbox"
            )));
        }
        Ok(pot)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn boundary_max(&self) -> f64 {
        let n = self.grid.n();
        let d = self.grid.dim();
        let mut m: f64 = 0.0;
        for (idx, v) in self.values.iter().enumerate() {
            let mut rem = idx;
            for _ in 0..d {
                let i = rem % n;
                rem /= n;
                if i == 0 || i == n - 1 {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }

    /// Content hash over the preset and the grid, used to key caches.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.spec).unwrap_or_default().as_bytes());
        h.update(serde_json::to_string(&self.grid.spec()).unwrap_or_default().as_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
