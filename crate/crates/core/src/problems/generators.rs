use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bayescg::LinearSystem;
use crate::error::{Error, Result};
use crate::linops::{CsrMatrix, DenseMatrix, SpdOperator};
use crate::multibcg::SystemFamily;

/// Seeded random SPD matrix `Qᵀ D Q` with Haar-like orthogonal `Q`.
///
/// For `d ≥ 2` the spectrum spans exactly `[1, cond_target]`, with interior
/// eigenvalues log-uniform in between. For `d = 1` the single eigenvalue is
/// log-uniform in the same range.
pub fn gen_random_spd(d: usize, cond_target: f64, seed: u64) -> Result<DenseMatrix> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(cond_target >= 1.0) || !cond_target.is_finite() {
        return Err(Error::invalid(format!("condition target must be finite and >= 1, got {cond_target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_c = cond_target.ln();
    let mut eig: Vec<f64> = (0..d).map(|_| (rng.random::<f64>() * log_c).exp()).collect();
    if d >= 2 {
        eig[0] = 1.0;
        eig[d - 1] = cond_target;
    }

    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig));
    let m = q.transpose() * diag * &q;
    Ok(DenseMatrix::from_nalgebra(m)?.symmetrized())
}

/// P1 finite-element stiffness matrix for `-Δu = f` on the unit square.
///
/// The square is cut into an `n × n` grid, each cell split along its
/// diagonal into two triangles. Boundary nodes carry homogeneous Dirichlet
/// data and are eliminated, leaving `(n−1)²` interior unknowns ordered
/// x-fastest. In 2D the element stiffness is invariant under uniform
/// scaling, so elements are assembled in grid units.
pub fn gen_mesh_stiffness(n: usize) -> Result<CsrMatrix> {
    if n < 2 {
        return Err(Error::invalid(format!("mesh size must be at least 2, got {n}")));
    }
    let interior = |i: usize, j: usize| -> Option<usize> {
        (i >= 1 && j >= 1 && i < n && j < n).then(|| (j - 1) * (n - 1) + (i - 1))
    };
    let mut triplets = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let lower = [(i, j), (i + 1, j), (i + 1, j + 1)];
            let upper = [(i, j), (i + 1, j + 1), (i, j + 1)];
            for tri in [lower, upper] {
                let k = element_stiffness(tri);
                for a in 0..3 {
                    let Some(ra) = interior(tri[a].0, tri[a].1) else { continue };
                    for b in 0..3 {
                        if let Some(rb) = interior(tri[b].0, tri[b].1) {
                            triplets.push((ra, rb, k[a][b]));
                        }
                    }
                }
            }
        }
    }
    let dim = (n - 1) * (n - 1);
    Ok(CsrMatrix::from_triplets(dim, dim, &triplets)?.pruned())
}

/// `K_ab = (b_a b_b + c_a c_b) / (4·area)` for a linear triangle.
fn element_stiffness(tri: [(usize, usize); 3]) -> [[f64; 3]; 3] {
    let p: Vec<(f64, f64)> = tri.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let b: Vec<f64> = (0..3).map(|k| p[(k + 1) % 3].1 - p[(k + 2) % 3].1).collect();
    let c: Vec<f64> = (0..3).map(|k| p[(k + 2) % 3].0 - p[(k + 1) % 3].0).collect();
    let area = 0.5 * ((p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1)).abs();
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for bb in 0..3 {
            k[a][bb] = (b[a] * b[bb] + c[a] * c[bb]) / (4.0 * area);
        }
    }
    k
}

/// Seeded standard-normal vector.
pub fn gen_rhs(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Diagonal-shift family `A_j = base + θ_j I`.
///
/// Right-hand sides are a shared seeded vector plus `perturbation` times an
/// independent seeded vector per system (`perturbation = 0` shares `b`).
pub fn gen_related_family(base: &SpdOperator, thetas: &[f64], rhs_seed: u64, perturbation: f64) -> Result<SystemFamily> {
    if thetas.is_empty() {
        return Err(Error::invalid("family needs at least one shift"));
    }
    if let Some(t) = thetas.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::invalid(format!("shifts must be positive and finite, got {t}")));
    }
    if !perturbation.is_finite() || perturbation < 0.0 {
        return Err(Error::invalid("rhs perturbation must be finite and nonnegative"));
    }
    let d = base.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rhs_seed);
    let shared: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let systems = thetas
        .iter()
        .map(|&theta| {
            let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = shared.iter().zip(&noise).map(|(s, e)| s + perturbation * e).collect();
            let a = SpdOperator::sum(vec![base.clone(), SpdOperator::scaled_identity(d, theta)])?;
            LinearSystem::new(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    SystemFamily::new(systems)
}
