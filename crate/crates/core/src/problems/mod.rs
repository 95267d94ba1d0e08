//! Problem ingestion (Matrix Market) and seeded synthetic generators.

mod generators;
pub mod matrix_market;

pub use generators::{gen_mesh_stiffness, gen_random_spd, gen_related_family, gen_rhs};
pub use matrix_market::{read_matrix_market, read_vector, write_matrix_market, write_vector};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::norm2;
use crate::multibcg::SystemFamily;
use crate::oracle;

/// Where a family came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Files { matrices: Vec<String>, rhs: Vec<String> },
    Generator { name: String, seed: u64, parameters: serde_json::Value },
}

#[derive(Debug, Clone)]
pub struct ProblemBundle {
    pub family: SystemFamily,
    pub provenance: Provenance,
    pub ground_truth: Option<Vec<Vec<f64>>>,
}

impl ProblemBundle {
    pub fn new(family: SystemFamily, provenance: Provenance) -> Self {
        ProblemBundle {
            family,
            provenance,
            ground_truth: None,
        }
    }

    /// Attaches dense direct solutions, checking `‖A_j x_j − b_j‖ ≤ 1e-10 ‖b_j‖`.
    pub fn with_ground_truth(mut self) -> Result<Self> {
        let truth = self
            .family
            .systems()
            .iter()
            .map(oracle::direct_solve)
            .collect::<Result<Vec<_>>>()?;
        for (sys, x) in self.family.systems().iter().zip(&truth) {
            let r = norm2(&sys.residual(x)?);
            let b = norm2(sys.rhs());
            if r > 1e-10 * b {
                return Err(Error::ResidualCheck {
                    relative: r / b,
                    tolerance: 1e-10,
                });
            }
        }
        self.ground_truth = Some(truth);
        Ok(self)
    }
}
