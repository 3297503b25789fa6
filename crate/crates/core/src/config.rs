//! JSON configuration schema. Matrices are row-major nested arrays.
//!
//! ```json
//! {
//!   "system":   { "A": [[1,-1],[1,0]], "B": [[[1,0],[0,1]], [[1,0],[0,1]]], "L": [[0.1,0],[0,0.2]] },
//!   "horizon":  { "t0": 0, "tN": 5, "steps": 500 },
//!   "x0": [2, -2],
//!   "players":  [ { "Q": [[1,0],[0,1]], "R": [[[1,0],[0,1]], [[0,0],[0,0]]] }, ... ],
//!   "simulation": { "D": 20, "seed": 42 },
//!   "study":    { "nodes": [20, 50, 100, 500], "repetitions": 10, "seed": 1, "noise": "common", "moments": "propagated", "timing_runs": 20 }
//! }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CostParameters, GameDefinition, NoiseModel, PlayerCost, TimeGrid};
use crate::scalar::{lit, Scalar};
use crate::study::{MomentSource, NoisePairing};

pub type RowMajor = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: RowMajor,
    #[serde(rename = "B")]
    pub b: Vec<RowMajor>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<RowMajor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSection {
    pub t0: f64,
    #[serde(rename = "tN")]
    pub tn: f64,
    pub steps: usize,
}

impl Default for HorizonSection {
    fn default() -> Self {
        Self { t0: 0.0, tn: 5.0, steps: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSection {
    #[serde(rename = "Q")]
    pub q: RowMajor,
    #[serde(rename = "R")]
    pub r: Vec<RowMajor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSection {
    #[serde(rename = "D")]
    pub demos: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySection {
    #[serde(default = "default_nodes")]
    pub nodes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoisePairing,
    #[serde(default)]
    pub moments: MomentSource,
    #[serde(default = "default_timing_runs")]
    pub timing_runs: usize,
}

fn default_nodes() -> Vec<usize> {
    vec![20, 50, 100, 500]
}

fn default_reps() -> usize {
    10
}

fn default_seed() -> u64 {
    1
}

fn default_timing_runs() -> usize {
    20
}

impl Default for StudySection {
    fn default() -> Self {
        Self { nodes: default_nodes(), repetitions: default_reps(), seed: default_seed(), noise: NoisePairing::Common, moments: MomentSource::default(), timing_runs: default_timing_runs() }
    }
}

/// Full configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub horizon: HorizonSection,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub players: Option<Vec<PlayerSection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
}

/// The subset of a configuration an observer is allowed to see: dynamics,
/// input matrices, horizon and initial state. Cost and noise fields are not
/// part of this type and are skipped by the parser.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SystemConfig {
    pub system: ObservedSystem,
    #[serde(default)]
    pub horizon: HorizonSection,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ObservedSystem {
    #[serde(rename = "A")]
    pub a: RowMajor,
    #[serde(rename = "B")]
    pub b: Vec<RowMajor>,
}

pub fn matrix<T: Scalar>(rows: &RowMajor, what: &str) -> Result<DMatrix<T>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular nested array")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} contains non-finite values")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| lit(rows[i][j])))
}

pub fn rows_of<T: Scalar>(m: &DMatrix<T>) -> RowMajor {
    m.row_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect()
}

fn build_game<T: Scalar>(a: &RowMajor, b: &[RowMajor], horizon: &HorizonSection, x0: &[f64]) -> Result<GameDefinition<T>> {
    let a = matrix(a, "system.A")?;
    let b = b
        .iter()
        .enumerate()
        .map(|(i, bi)| matrix(bi, &format!("system.B[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::new(lit(horizon.t0), lit(horizon.tn), horizon.steps)?;
    let x0 = DVector::from_iterator(x0.len(), x0.iter().map(|&v| lit(v)));
    GameDefinition::new(a, b, grid, x0)
}

impl SystemConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn game<T: Scalar>(&self) -> Result<GameDefinition<T>> {
        build_game(&self.system.a, &self.system.b, &self.horizon, &self.x0)
    }
}

impl GameConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn game<T: Scalar>(&self) -> Result<GameDefinition<T>> {
        build_game(&self.system.a, &self.system.b, &self.horizon, &self.x0)
    }

    pub fn costs<T: Scalar>(&self) -> Result<CostParameters<T>> {
        let players = self
            .players
            .as_ref()
            .ok_or_else(|| Error::Config("missing `players` section".into()))?;
        let players = players
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(PlayerCost {
                    q: matrix(&p.q, &format!("players[{i}].Q"))?,
                    r: p.r
                        .iter()
                        .enumerate()
                        .map(|(j, r)| matrix(r, &format!("players[{i}].R[{j}]")))
                        .collect::<Result<Vec<_>>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CostParameters::new(players))
    }

    pub fn noise<T: Scalar>(&self) -> Result<NoiseModel<T>> {
        let l = self
            .system
            .l
            .as_ref()
            .ok_or_else(|| Error::Config("missing `system.L`".into()))?;
        let dt = (self.horizon.tn - self.horizon.t0) / self.horizon.steps.max(1) as f64;
        NoiseModel::from_matrix(matrix(l, "system.L")?, lit(dt))
    }

    /// Builds a configuration from model objects, e.g. to persist estimates.
    pub fn from_parts<T: Scalar>(
        game: &GameDefinition<T>,
        costs: Option<&CostParameters<T>>,
        noise: Option<&NoiseModel<T>>,
    ) -> Self {
        let grid = game.grid();
        Self {
            system: SystemSection {
                a: rows_of(game.a()),
                b: game.b_all().iter().map(rows_of).collect(),
                l: noise.map(|n| rows_of(n.matrix())),
            },
            horizon: HorizonSection { t0: grid.t0().to_f64_lossy(), tn: grid.tn().to_f64_lossy(), steps: grid.steps() },
            x0: game.x0().iter().map(|v| v.to_f64_lossy()).collect(),
            players: costs.map(|c| {
                c.players
                    .iter()
                    .map(|p| PlayerSection { q: rows_of(&p.q), r: p.r.iter().map(rows_of).collect() })
                    .collect()
            }),
            simulation: None,
            study: None,
        }
    }

    /// The two-player example system: `A = [[1,-1],[1,0]]`, `B_1 = B_2 = I`,
    /// `L = diag(0.1, 0.2)`, `x0 = (2, -2)`, horizon `[0, 5]` with 500 steps.
    pub fn reference_example() -> Self {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let zero = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        Self {
            system: SystemSection {
                a: vec![vec![1.0, -1.0], vec![1.0, 0.0]],
                b: vec![eye.clone(), eye.clone()],
                l: Some(vec![vec![0.1, 0.0], vec![0.0, 0.2]]),
            },
            horizon: HorizonSection::default(),
            x0: vec![2.0, -2.0],
            players: Some(vec![
                PlayerSection { q: eye.clone(), r: vec![eye.clone(), zero.clone()] },
                PlayerSection { q: vec![vec![1.0, 0.0], vec![0.0, 10.0]], r: vec![zero, vec![vec![1.0, 0.0], vec![0.0, 2.0]]] },
            ]),
            simulation: Some(SimulationSection { demos: 20, seed: 42 }),
            study: Some(StudySection::default()),
        }
    }
}

/// Hex SHA-256 of the given bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
