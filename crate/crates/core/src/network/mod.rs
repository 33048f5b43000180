//! Network topology and the algebraic network equations.
//!
//! Two fidelity modes are supported. `Analytic` reduces each AC subgrid to a
//! lossless power-angle model and each DC subgrid to a resistive conductance
//! network, which is the setting the closed-form stability results live in.
//! `Dynamic` keeps the full complex π-line admittance network on the AC side
//! (solved quasi-statically at every integrator stage) and promotes DC cable
//! branch currents and node voltages to differential states.

mod admittance;
mod angle;
mod dc;
mod newton;
mod phasor;

pub use admittance::{
    ac_interface_susceptance, build_admittance, dc_equivalent_conductance, line_impedance_ohm,
};
pub use angle::{solve_angle_network, AngleInput, AngleSolution, AngleSource};
pub use dc::{solve_dc_network, DcDevice, DcInput, DcSolution};
pub use newton::newton_solve;
pub use phasor::{solve_phasor_network, EmfTerminal, PhasorInput, PhasorSolution, VoltageRef};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::per_unit::PerUnitBase;

/// Network fidelity mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Lossless power-angle AC, resistive DC. Exact setting for the
    /// closed-form small-signal models.
    Analytic,
    /// Full π-line phasor AC, DC cables with three parallel RL branches as
    /// differential states.
    Dynamic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcBus {
    pub id: String,
}

/// One π-model transmission line between two buses of an AC subgrid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcLine {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub r_ohm_per_km: f64,
    pub l_mh_per_km: f64,
    pub c_uf_per_km: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcSubgrid {
    pub id: String,
    pub buses: Vec<AcBus>,
    pub lines: Vec<AcLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcNode {
    pub id: String,
}

/// One of the three parallel series-RL branches of a cable segment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CableBranch {
    pub r_ohm_per_km: f64,
    pub l_mh_per_km: f64,
}

/// DC cable segment: three parallel series-RL branches plus shunt C and
/// leakage G, all per km.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcCable {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub branches: [CableBranch; 3],
    pub c_uf_per_km: f64,
    pub g_us_per_km: f64,
}

impl DcCable {
    /// Zero-frequency series resistance of the segment in ohms: the three
    /// branch resistances in parallel, scaled by length.
    pub fn series_resistance_ohm(&self) -> f64 {
        let g: f64 = self.branches.iter().map(|b| 1.0 / b.r_ohm_per_km).sum();
        self.length_km / g
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcSubgrid {
    pub id: String,
    pub nodes: Vec<DcNode>,
    pub cables: Vec<DcCable>,
}

/// Complete electrical model: per-unit base plus every subgrid.
///
/// IPC attachments (which converter couples which AC bus to which DC node)
/// live with the scenario, not here; the network only knows geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkModel {
    pub base: PerUnitBase,
    pub ac: Vec<AcSubgrid>,
    pub dc: Vec<DcSubgrid>,
}

impl AcSubgrid {
    pub fn validate(&self) -> Result<()> {
        for (k, line) in self.lines.iter().enumerate() {
            if line.length_km <= 0.0 {
                return Err(Error::DegenerateBranch(format!(
                    "{}: line {k} has non-positive length {}",
                    self.id, line.length_km
                )));
            }
            if line.l_mh_per_km <= 0.0 || line.r_ohm_per_km < 0.0 || line.c_uf_per_km < 0.0 {
                return Err(Error::Validation(format!(
                    "{}: line {k} has invalid impedance data",
                    self.id
                )));
            }
            if line.from >= self.buses.len() || line.to >= self.buses.len() || line.from == line.to
            {
                return Err(Error::Validation(format!(
                    "{}: line {k} endpoints out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// True if the bus graph is connected (ignoring devices).
    pub fn is_connected(&self) -> bool {
        connected_component(self.buses.len(), self.lines.iter().map(|l| (l.from, l.to)))
            .iter()
            .all(|&r| r)
    }
}

impl DcSubgrid {
    pub fn validate(&self) -> Result<()> {
        for (k, cab) in self.cables.iter().enumerate() {
            if cab.length_km <= 0.0 {
                return Err(Error::DegenerateBranch(format!(
                    "{}: cable {k} has non-positive length {}",
                    self.id, cab.length_km
                )));
            }
            for b in &cab.branches {
                if b.r_ohm_per_km <= 0.0 || b.l_mh_per_km <= 0.0 {
                    return Err(Error::Validation(format!(
                        "{}: cable {k} branch parameters must be positive",
                        self.id
                    )));
                }
            }
            if cab.c_uf_per_km <= 0.0 || cab.g_us_per_km < 0.0 {
                return Err(Error::Validation(format!(
                    "{}: cable {k} shunt parameters invalid",
                    self.id
                )));
            }
            if cab.from >= self.nodes.len() || cab.to >= self.nodes.len() || cab.from == cab.to {
                return Err(Error::Validation(format!(
                    "{}: cable {k} endpoints out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        connected_component(self.nodes.len(), self.cables.iter().map(|c| (c.from, c.to)))
            .iter()
            .all(|&r| r)
    }

    /// Nodes reachable from `start` through cables.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut reach = vec![false; self.nodes.len()];
        reach[start] = true;
        let mut frontier = vec![start];
        while let Some(n) = frontier.pop() {
            for c in &self.cables {
                let other = if c.from == n {
                    c.to
                } else if c.to == n {
                    c.from
                } else {
                    continue;
                };
                if !reach[other] {
                    reach[other] = true;
                    frontier.push(other);
                }
            }
        }
        reach
    }
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for g in &self.ac {
            g.validate()?;
        }
        for g in &self.dc {
            g.validate()?;
        }
        Ok(())
    }
}

fn connected_component(n: usize, edges: impl Iterator<Item = (usize, usize)> + Clone) -> Vec<bool> {
    let mut reach = vec![false; n.max(1)];
    reach[0] = true;
    let mut frontier = vec![0usize];
    while let Some(k) = frontier.pop() {
        for (a, b) in edges.clone() {
            let other = if a == k {
                b
            } else if b == k {
                a
            } else {
                continue;
            };
            if !reach[other] {
                reach[other] = true;
                frontier.push(other);
            }
        }
    }
    reach
}
