//! Seeded Brownian increment ensembles for Monte Carlo studies.
//!
//! The Gaussian law is the production backend; the two-point law
//! (`+-sqrt(tau)` with probability 1/2) matches the binomial tree in
//! distribution and is used to cross-check Monte Carlo estimators against
//! exact tree expectations.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::TimeGrid;

const MAGIC: &[u8; 8] = b"SPOCPTH1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementLaw {
    Gaussian,
    TwoPoint,
}

/// `n_paths x steps` matrix of Brownian increments, path-major.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    law: IncrementLaw,
    increments: Vec<f64>,
}

impl PathEnsemble {
    /// Samples `n_paths` i.i.d. increment rows, each entry Normal(0, tau).
    pub fn sample(t_end: f64, steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        Self::sample_with_law(t_end, steps, n_paths, seed, IncrementLaw::Gaussian)
    }

    pub fn sample_with_law(
        t_end: f64,
        steps: usize,
        n_paths: usize,
        seed: u64,
        law: IncrementLaw,
    ) -> Result<Self> {
        let grid = TimeGrid::new(t_end, steps)?;
        if n_paths == 0 {
            return Err(Error::InvalidGrid("need at least one path".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sqrt_tau = grid.tau().sqrt();
        let mut increments = Vec::with_capacity(n_paths * steps);
        for _ in 0..n_paths * steps {
            let dw = match law {
                IncrementLaw::Gaussian => {
                    let z: f64 = rng.sample(StandardNormal);
                    sqrt_tau * z
                }
                IncrementLaw::TwoPoint => {
                    if rng.gen::<bool>() {
                        sqrt_tau
                    } else {
                        -sqrt_tau
                    }
                }
            };
            increments.push(dw);
        }
        Ok(PathEnsemble {
            grid,
            n_paths,
            seed,
            law,
            increments,
        })
    }

    pub fn from_increments(
        t_end: f64,
        steps: usize,
        n_paths: usize,
        seed: u64,
        law: IncrementLaw,
        increments: Vec<f64>,
    ) -> Result<Self> {
        let grid = TimeGrid::new(t_end, steps)?;
        if increments.len() != n_paths * steps {
            return Err(Error::ShapeMismatch(format!(
                "expected {} increments, got {}",
                n_paths * steps,
                increments.len()
            )));
        }
        Ok(PathEnsemble {
            grid,
            n_paths,
            seed,
            law,
            increments,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> IncrementLaw {
        self.law
    }

    pub fn path(&self, p: usize) -> &[f64] {
        &self.increments[p * self.steps()..(p + 1) * self.steps()]
    }

    /// Sums `factor` consecutive increments per path: the same Brownian
    /// paths read on a grid coarsened by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<PathEnsemble> {
        let steps = self.steps();
        if factor == 0 || steps % factor != 0 {
            return Err(Error::NonDivisor { factor, steps });
        }
        let coarse_steps = steps / factor;
        let mut increments = Vec::with_capacity(self.n_paths * coarse_steps);
        for p in 0..self.n_paths {
            let row = self.path(p);
            for c in 0..coarse_steps {
                increments.push(row[c * factor..(c + 1) * factor].iter().sum());
            }
        }
        PathEnsemble::from_increments(
            self.grid.t_end(),
            coarse_steps,
            self.n_paths,
            self.seed,
            self.law,
            increments,
        )
    }

    /// Writes the ensemble as a 32-byte header (magic, J, M, seed as
    /// little-endian u64) followed by the increments as little-endian f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut header = Vec::with_capacity(32);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&(self.steps() as u64).to_le_bytes());
        header.extend_from_slice(&(self.n_paths as u64).to_le_bytes());
        header.extend_from_slice(&self.seed.to_le_bytes());
        file.write_all(&header).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(self.increments.len() * 8);
        for v in &self.increments {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads an ensemble written by [`PathEnsemble::write_binary`]. The
    /// horizon is not part of the header and must be supplied.
    pub fn read_binary(path: &Path, t_end: f64, law: IncrementLaw) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = [0u8; 32];
        file.read_exact(&mut header)
            .map_err(|e| Error::io(path, e))?;
        if &header[0..8] != MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic, not a path ensemble file",
                path.display()
            )));
        }
        let steps = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let n_paths = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(header[24..32].try_into().unwrap());
        let mut payload = Vec::new();
        file.read_to_end(&mut payload)
            .map_err(|e| Error::io(path, e))?;
        if payload.len() != steps * n_paths * 8 {
            return Err(Error::Format(format!(
                "{}: expected {} payload bytes, found {}",
                path.display(),
                steps * n_paths * 8,
                payload.len()
            )));
        }
        let increments = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        PathEnsemble::from_increments(t_end, steps, n_paths, seed, law, increments)
    }
}
