#![allow(dead_code)]

use std::sync::Arc;

use nls_fgr::fgr::{gamma_matrices, FgrData};
use nls_fgr::grid::Grid;
use nls_fgr::ground_state::{branch_point, BranchPoint};
use nls_fgr::linear_spectrum::{discrete_spectrum, LinearSpectrum};
use nls_fgr::linearization::{build_linearization, neutral_modes, riesz_projections, LinearizedOperator, NeutralModeSet, RieszProjector};
use nls_fgr::potential::{Potential, PotentialSpec};
use nls_fgr::resolvent::ResolventConfig;

pub const NU: f64 = 1.3;

/// A compact Pöschl–Teller laboratory, small enough for debug-speed tests.
pub struct Lab {
    pub grid: Arc<Grid>,
    pub pot: Potential,
    pub spec: LinearSpectrum,
}

impl Lab {
    pub fn new(n: usize, lbox: f64) -> Lab {
        let grid = Grid::new(1, n, lbox).unwrap();
        let pot = Potential::new(PotentialSpec::PoschlTeller { nu: NU, width: 1.0 }, &grid).unwrap();
        let spec = discrete_spectrum(&pot, 2).unwrap();
        Lab { grid, pot, spec }
    }

    pub fn small() -> Lab {
        Lab::new(1024, 40.0)
    }

    pub fn point(&self, lambda: f64) -> Point {
        let bp = branch_point(&self.pot, &self.spec, lambda, 1.0).unwrap();
        let op = build_linearization(&self.pot, &bp).unwrap();
        let modes = neutral_modes(&op, &self.spec).unwrap();
        let proj = riesz_projections(&op, &modes).unwrap();
        Point { bp, op, modes, proj }
    }
}

pub struct Point {
    pub bp: BranchPoint,
    pub op: LinearizedOperator,
    pub modes: NeutralModeSet,
    pub proj: RieszProjector,
}

impl Point {
    pub fn fgr(&self, lab: &Lab) -> FgrData {
        gamma_matrices(&self.op, &self.modes, &self.proj, &lab.spec, self.bp.profile.delta, &ResolventConfig::default()).unwrap()
    }
}
