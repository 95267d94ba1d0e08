use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dense::{factor_lower, solve_with_lower};
use super::{check_len, dot, norm2, CsrMatrix, DenseMatrix};
use crate::error::{Error, Result};

/// Number of random probes used by the construction-time symmetry check.
pub const SYMMETRY_PROBES: usize = 5;
const SYMMETRY_SEED: u64 = 0x0005_eed5;
const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// A symmetric (positive semi-)definite linear operator.
///
/// Composite operators form an evaluation tree and are applied factor by
/// factor; nothing is ever densified unless [`SpdOperator::to_dense`] is
/// called explicitly. Cloning is cheap (shared tree).
#[derive(Clone)]
pub struct SpdOperator {
    node: Arc<Node>,
    dim: usize,
}

enum Node {
    Identity,
    Scaled { factor: f64, inner: SpdOperator },
    Diagonal(Vec<f64>),
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
    /// `outer · inner · outer` (outer symmetric).
    Sandwich { outer: SpdOperator, inner: SpdOperator },
    Sum(Vec<SpdOperator>),
    BlockDiag(Vec<SpdOperator>),
    /// `task ⊗ within`, system-major blocks.
    Kronecker { task: DenseMatrix, within: SpdOperator },
    /// `(L Lᵀ)⁻¹`
    CholeskyInverse(DMatrix<f64>),
    /// Principal submatrix on `offset..offset+len`.
    PrincipalBlock { inner: SpdOperator, offset: usize },
}

impl fmt::Debug for SpdOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpdOperator({}, dim={})", self.describe(), self.dim)
    }
}

impl SpdOperator {
    fn from_node(node: Node, dim: usize) -> Self {
        SpdOperator {
            node: Arc::new(node),
            dim,
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "operator dimension must be positive");
        Self::from_node(Node::Identity, n)
    }

    pub fn scaled_identity(n: usize, gamma: f64) -> Self {
        Self::identity(n).scaled(gamma)
    }

    /// Diagonal operator; entries must be finite and nonnegative.
    pub fn diagonal(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::invalid("diagonal operator needs at least one entry"));
        }
        super::ensure_finite(&d, "diagonal")?;
        if let Some(i) = d.iter().position(|&x| x < 0.0) {
            return Err(Error::invalid(format!("diagonal entry {i} is negative")));
        }
        Ok(Self::diagonal_unchecked(d))
    }

    /// Diagonal operator without the sign check. Used for tests of
    /// downstream PSD detection.
    pub fn diagonal_unchecked(d: Vec<f64>) -> Self {
        let n = d.len();
        Self::from_node(Node::Diagonal(d), n)
    }

    pub fn dense(m: DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!("operator must be square, got {}x{}", m.rows(), m.cols())));
        }
        let n = m.rows();
        let op = Self::from_node(Node::Dense(m), n);
        op.check_symmetry(SYMMETRY_PROBES, SYMMETRY_SEED)?;
        Ok(op)
    }

    pub fn sparse(m: CsrMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::invalid(format!("operator must be square, got {}x{}", m.rows(), m.cols())));
        }
        let n = m.rows();
        let op = Self::from_node(Node::Sparse(m), n);
        op.check_symmetry(SYMMETRY_PROBES, SYMMETRY_SEED)?;
        Ok(op)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor.is_finite(), "scale factor must be finite");
        Self::from_node(
            Node::Scaled {
                factor,
                inner: self.clone(),
            },
            self.dim,
        )
    }

    /// `outer · inner · outer`, e.g. the Gram operator `A Σ₀ Aᵀ` for symmetric `A`.
    pub fn sandwich(outer: &SpdOperator, inner: &SpdOperator) -> Result<Self> {
        check_len("sandwich", outer.dim, inner.dim)?;
        Ok(Self::from_node(
            Node::Sandwich {
                outer: outer.clone(),
                inner: inner.clone(),
            },
            outer.dim,
        ))
    }

    pub fn sum(terms: Vec<SpdOperator>) -> Result<Self> {
        let dim = terms.first().ok_or_else(|| Error::invalid("empty operator sum"))?.dim;
        for t in &terms {
            check_len("operator sum", dim, t.dim)?;
        }
        Ok(Self::from_node(Node::Sum(terms), dim))
    }

    pub fn block_diagonal(blocks: Vec<SpdOperator>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("block-diagonal operator needs at least one block"));
        }
        let dim = blocks.iter().map(|b| b.dim).sum();
        Ok(Self::from_node(Node::BlockDiag(blocks), dim))
    }

    /// `task ⊗ within`. The task matrix must be square and symmetric.
    pub fn kronecker(task: DenseMatrix, within: SpdOperator) -> Result<Self> {
        if !task.is_square() {
            return Err(Error::invalid("task covariance must be square"));
        }
        let asym = task.asymmetry();
        if asym > 1e-12 * task.max_abs() {
            return Err(Error::NotSymmetric(format!("task covariance asymmetry {asym:e}")));
        }
        let dim = task.rows() * within.dim;
        Ok(Self::from_node(Node::Kronecker { task, within }, dim))
    }

    /// `P⁻¹` applied through a dense Cholesky factorization of `p`.
    pub fn cholesky_inverse(p: &SpdOperator) -> Result<Self> {
        let dense = p.to_dense()?.symmetrized();
        let l = factor_lower(dense.inner(), 0.0)?;
        Ok(Self::from_node(Node::CholeskyInverse(l), p.dim))
    }

    /// Principal block `offset..offset+len`: embed, apply, restrict.
    pub fn principal_block(&self, offset: usize, len: usize) -> Result<Self> {
        if len == 0 || offset + len > self.dim {
            return Err(Error::invalid(format!(
                "block {offset}..{} outside operator of dimension {}",
                offset + len,
                self.dim
            )));
        }
        if offset == 0 && len == self.dim {
            return Ok(self.clone());
        }
        Ok(Self::from_node(
            Node::PrincipalBlock {
                inner: self.clone(),
                offset,
            },
            len,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stage label used in error messages.
    pub fn describe(&self) -> String {
        match &*self.node {
            Node::Identity => "identity".into(),
            Node::Scaled { factor, inner } => format!("{factor}*{}", inner.describe()),
            Node::Diagonal(_) => "diagonal".into(),
            Node::Dense(_) => "dense".into(),
            Node::Sparse(_) => "csr".into(),
            Node::Sandwich { outer, inner } => format!("sandwich[{}; {}]", outer.describe(), inner.describe()),
            Node::Sum(_) => "sum".into(),
            Node::BlockDiag(blocks) => format!("block-diagonal[{}]", blocks.len()),
            Node::Kronecker { within, .. } => format!("kronecker[task ⊗ {}]", within.describe()),
            Node::CholeskyInverse(_) => "cholesky-inverse".into(),
            Node::PrincipalBlock { inner, .. } => format!("principal-block[{}]", inner.describe()),
        }
    }

    /// Block operators of a block-diagonal node, if this is one.
    pub fn blocks(&self) -> Option<&[SpdOperator]> {
        match &*self.node {
            Node::BlockDiag(b) => Some(b),
            _ => None,
        }
    }

    /// `op · v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec", self.dim, v.len())?;
        self.apply_checked(v)
    }

    fn apply_checked(&self, v: &[f64]) -> Result<Vec<f64>> {
        let out = match &*self.node {
            Node::Identity => v.to_vec(),
            Node::Scaled { factor, inner } => {
                let mut y = inner.apply_checked(v)?;
                y.iter_mut().for_each(|x| *x *= factor);
                y
            }
            Node::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Node::Dense(m) => m.matvec(v),
            Node::Sparse(m) => m.matvec(v),
            Node::Sandwich { outer, inner } => {
                let t = outer.apply_checked(v)?;
                let t = inner.apply_checked(&t)?;
                outer.apply_checked(&t)?
            }
            Node::Sum(terms) => {
                let mut acc = vec![0.0; self.dim];
                for t in terms {
                    let y = t.apply_checked(v)?;
                    acc.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
                }
                acc
            }
            Node::BlockDiag(blocks) => {
                let mut out = Vec::with_capacity(self.dim);
                let mut start = 0;
                for b in blocks {
                    out.extend(b.apply_checked(&v[start..start + b.dim])?);
                    start += b.dim;
                }
                out
            }
            Node::Kronecker { task, within } => kron_apply(task, within, v)?,
            Node::CholeskyInverse(l) => solve_with_lower(l, v),
            Node::PrincipalBlock { inner, offset } => {
                let mut full = vec![0.0; inner.dim];
                full[*offset..offset + self.dim].copy_from_slice(v);
                let y = inner.apply_checked(&full)?;
                y[*offset..offset + self.dim].to_vec()
            }
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                stage: self.describe(),
            });
        }
        Ok(out)
    }

    /// Operator diagonal; structured nodes are read directly, the rest probed
    /// with coordinate vectors.
    pub fn diagonal_entries(&self) -> Result<Vec<f64>> {
        Ok(match &*self.node {
            Node::Identity => vec![1.0; self.dim],
            Node::Scaled { factor, inner } => inner.diagonal_entries()?.into_iter().map(|x| x * factor).collect(),
            Node::Diagonal(d) => d.clone(),
            Node::Dense(m) => (0..self.dim).map(|i| m.get(i, i)).collect(),
            Node::Sparse(m) => m.diagonal(),
            Node::Sum(terms) => {
                let mut acc = vec![0.0; self.dim];
                for t in terms {
                    acc.iter_mut().zip(t.diagonal_entries()?).for_each(|(a, b)| *a += b);
                }
                acc
            }
            Node::BlockDiag(blocks) => {
                let mut out = Vec::with_capacity(self.dim);
                for b in blocks {
                    out.extend(b.diagonal_entries()?);
                }
                out
            }
            Node::Kronecker { task, within } => {
                let inner = within.diagonal_entries()?;
                (0..task.rows())
                    .flat_map(|j| inner.iter().map(move |x| task.get(j, j) * x))
                    .collect()
            }
            Node::PrincipalBlock { inner, offset } => inner.diagonal_entries()?[*offset..offset + self.dim].to_vec(),
            Node::Sandwich { .. } | Node::CholeskyInverse(_) => {
                let mut e = vec![0.0; self.dim];
                let mut out = Vec::with_capacity(self.dim);
                for i in 0..self.dim {
                    e[i] = 1.0;
                    out.push(self.apply_checked(&e)?[i]);
                    e[i] = 0.0;
                }
                out
            }
        })
    }

    /// Densifies by applying to every coordinate vector. Test and oracle use only.
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let n = self.dim;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_checked(&e)?;
            m.set_column(j, &nalgebra::DVector::from_vec(col));
            e[j] = 0.0;
        }
        DenseMatrix::from_nalgebra(m)
    }

    /// Randomized symmetry test: `|uᵀ(Wv) − vᵀ(Wu)| ≤ 1e-10 ‖u‖‖v‖‖W‖_est`
    /// over `probes` seeded Gaussian pairs. Returns the worst normalized defect.
    pub fn check_symmetry(&self, probes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::with_capacity(probes);
        let mut norm_est = 0.0_f64;
        for _ in 0..probes {
            let u: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let wu = self.apply_checked(&u)?;
            let wv = self.apply_checked(&v)?;
            norm_est = norm_est.max(norm2(&wu) / norm2(&u)).max(norm2(&wv) / norm2(&v));
            pairs.push((u, v, wu, wv));
        }
        let mut worst = 0.0_f64;
        for (u, v, wu, wv) in &pairs {
            let scale = norm2(u) * norm2(v) * norm_est;
            let defect = (dot(u, wv) - dot(v, wu)).abs();
            if defect > SYMMETRY_TOLERANCE * scale {
                return Err(Error::NotSymmetric(format!(
                    "{} operator: probe defect {defect:e} exceeds {:e}",
                    self.describe(),
                    SYMMETRY_TOLERANCE * scale
                )));
            }
            if scale > 0.0 {
                worst = worst.max(defect / scale);
            }
        }
        Ok(worst)
    }
}

/// Matrix-free `(B ⊗ Σ) v`: apply `Σ` per block, then mix blocks by `B`.
fn kron_apply(task: &DenseMatrix, within: &SpdOperator, v: &[f64]) -> Result<Vec<f64>> {
    let d = within.dim;
    let j_count = task.rows();
    let inner: Vec<Vec<f64>> = v
        .chunks_exact(d)
        .map(|block| within.apply_checked(block))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; d * j_count];
    for (i, out_block) in out.chunks_exact_mut(d).enumerate() {
        for (j, block) in inner.iter().enumerate() {
            let bij = task.get(i, j);
            if bij != 0.0 {
                out_block.iter_mut().zip(block).for_each(|(o, x)| *o += bij * x);
            }
        }
    }
    Ok(out)
}
