//! Dense small-scale semidefinite programming.
//!
//! Problems are stated over one or more symmetric PSD blocks plus optional
//! free scalar variables:
//!
//!   maximize   sum_b <C_b, X_b> + c_f^T u
//!   subject to sum_b <A_{i,b}, X_b> + a_i^T u = b_i,   X_b >= 0.
//!
//! The work horse is a homogeneous self-dual embedding solved by a
//! Nesterov-Todd scaled predictor-corrector interior-point method
//! (`ipm`), with an operator-splitting fallback (`splitting`) for
//! ill-conditioned Newton systems. Free variables are handled natively in
//! the Newton system, so unbounded-below scalars are legal.

mod ipm;
mod splitting;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Sparse symmetric coefficient entries of one block: (i, j, v) with i <= j
/// represents v at (i, j) and (j, i).
#[derive(Clone, Debug, Default)]
pub struct BlockCoeffs {
    pub entries: Vec<(usize, usize, f64)>,
}

impl BlockCoeffs {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        BlockCoeffs { entries }
    }

    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for &(i, j, v) in &self.entries {
            acc += if i == j { v * x[(i, i)] } else { 2.0 * v * x[(i, j)] };
        }
        acc
    }
}

/// One affine constraint sum_b <A_b, X_b> + a^T u = rhs.
#[derive(Clone, Debug, Default)]
pub struct Constraint {
    /// Indexed by block; may hold fewer blocks than the problem (rest zero).
    pub blocks: Vec<BlockCoeffs>,
    /// (free variable index, coefficient).
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Objective {
    pub blocks: Vec<BlockCoeffs>,
    pub free: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub num_free: usize,
    pub constraints: Vec<Constraint>,
    /// Maximization objective.
    pub objective: Objective,
}

impl SdpProblem {
    pub fn feasibility(block_dims: Vec<usize>, num_free: usize) -> Self {
        SdpProblem {
            block_dims,
            num_free,
            constraints: Vec::new(),
            objective: Objective::default(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let check = |bc: &[BlockCoeffs], what: &str| -> crate::Result<()> {
            if bc.len() > self.block_dims.len() {
                return Err(crate::Error::DimensionMismatch(format!(
                    "{what}: {} block matrices for {} blocks",
                    bc.len(),
                    self.block_dims.len()
                )));
            }
            for (b, m) in bc.iter().enumerate() {
                for &(i, j, _) in &m.entries {
                    if i > j || j >= self.block_dims[b] {
                        return Err(crate::Error::DimensionMismatch(format!(
                            "{what}: entry ({i},{j}) outside block {b} of dim {}",
                            self.block_dims[b]
                        )));
                    }
                }
            }
            Ok(())
        };
        for (k, c) in self.constraints.iter().enumerate() {
            check(&c.blocks, &format!("constraint {k}"))?;
            for &(f, _) in &c.free {
                if f >= self.num_free {
                    return Err(crate::Error::DimensionMismatch(format!(
                        "constraint {k}: free var {f} out of range"
                    )));
                }
            }
        }
        check(&self.objective.blocks, "objective")?;
        for &(f, _) in &self.objective.free {
            if f >= self.num_free {
                return Err(crate::Error::DimensionMismatch("objective free var".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    /// Converged primal-dual pair within tolerances.
    Optimal,
    /// Certificate of primal infeasibility found (y-ray in `y`).
    Infeasible,
    /// Certificate of dual infeasibility found (improving ray in `blocks`/`free`).
    Unbounded,
    /// Neither convergence nor a certificate within the iteration budget.
    Indeterminate,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub blocks: Vec<DMatrix<f64>>,
    pub free: Vec<f64>,
    pub y: Vec<f64>,
    pub z_blocks: Vec<DMatrix<f64>>,
    /// Maximization objective value at `blocks`/`free` (when Optimal).
    pub objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub used_fallback: bool,
    pub trace: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SolveOpts {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub splitting_fallback: bool,
    pub splitting_max_iter: usize,
    pub trace: bool,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 500,
            splitting_fallback: true,
            splitting_max_iter: 100_000,
            trace: false,
        }
    }
}

/// Solves the SDP. Deterministic for fixed inputs and options.
pub fn solve(problem: &SdpProblem, opts: &SolveOpts) -> crate::Result<SdpSolution> {
    problem.validate()?;
    let mut sol = ipm::solve_hsde(problem, opts);
    if sol.status == SdpStatus::Indeterminate && opts.splitting_fallback {
        let alt = splitting::solve_admm(problem, opts);
        if alt.status != SdpStatus::Indeterminate {
            return Ok(alt);
        }
        sol.trace.extend(alt.trace);
    }
    Ok(sol)
}

/// Projection onto the PSD cone in Frobenius norm (eigenvalue clamping).
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let asym: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0, f64::max);
    assert!(asym <= 1e-12 * (1.0 + m.amax()), "matrix must be symmetric");
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = sym.symmetric_eigen();
    let mut out = DMatrix::zeros(n, n);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += ev * &v * v.transpose();
        }
    }
    out
}

/// Residual metrics for any (problem, solution) pair, regardless of status.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub min_eigenvalues: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
}

pub fn residuals(problem: &SdpProblem, sol: &SdpSolution) -> crate::Result<ResidualReport> {
    problem.validate()?;
    if sol.blocks.len() != problem.block_dims.len() || sol.free.len() != problem.num_free {
        return Err(crate::Error::DimensionMismatch("solution does not match problem".into()));
    }
    let mut pres2 = 0.0;
    for c in &problem.constraints {
        let mut lhs = 0.0;
        for (b, m) in c.blocks.iter().enumerate() {
            lhs += m.inner(&sol.blocks[b]);
        }
        for &(f, v) in &c.free {
            lhs += v * sol.free[f];
        }
        pres2 += (lhs - c.rhs) * (lhs - c.rhs);
    }
    let mut objective = 0.0;
    for (b, m) in problem.objective.blocks.iter().enumerate() {
        objective += m.inner(&sol.blocks[b]);
    }
    for &(f, v) in &problem.objective.free {
        objective += v * sol.free[f];
    }
    let dual_objective: f64 =
        problem.constraints.iter().zip(&sol.y).map(|(c, y)| c.rhs * y).sum();
    // Dual residual: || sum_i y_i A_i - C - Z ||_F over blocks, plus the free
    // part sum_i y_i a_i - c_f.
    let mut dres2 = 0.0;
    for (b, &dim) in problem.block_dims.iter().enumerate() {
        let mut s = DMatrix::zeros(dim, dim);
        for (c, y) in problem.constraints.iter().zip(&sol.y) {
            if let Some(m) = c.blocks.get(b) {
                for &(i, j, v) in &m.entries {
                    s[(i, j)] += v * y;
                    if i != j {
                        s[(j, i)] += v * y;
                    }
                }
            }
        }
        if let Some(m) = problem.objective.blocks.get(b) {
            for &(i, j, v) in &m.entries {
                s[(i, j)] -= v;
                if i != j {
                    s[(j, i)] -= v;
                }
            }
        }
        if let Some(z) = sol.z_blocks.get(b) {
            s -= z;
        }
        dres2 += s.iter().map(|v| v * v).sum::<f64>();
    }
    let mut free_dual = vec![0.0; problem.num_free];
    for (c, y) in problem.constraints.iter().zip(&sol.y) {
        for &(f, v) in &c.free {
            free_dual[f] += v * y;
        }
    }
    for &(f, v) in &problem.objective.free {
        free_dual[f] -= v;
    }
    dres2 += free_dual.iter().map(|v| v * v).sum::<f64>();
    let min_eigenvalues = sol
        .blocks
        .iter()
        .map(|x| {
            if x.nrows() == 0 {
                0.0
            } else {
                x.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    Ok(ResidualReport {
        primal_residual: pres2.sqrt(),
        dual_residual: dres2.sqrt(),
        gap: (objective - dual_objective).abs(),
        min_eigenvalues,
        objective,
        dual_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolveOpts {
        SolveOpts::default()
    }

    #[test]
    fn max_offdiagonal_of_psd_2x2() {
        // maximize x s.t. [[1, x], [x, 1]] >= 0  ->  x = 1.
        // Block variable X with X11 = X22 = 1 fixed; objective picks X12.
        let mut prob = SdpProblem::feasibility(vec![2], 0);
        prob.constraints.push(Constraint {
            blocks: vec![BlockCoeffs { entries: vec![(0, 0, 1.0)] }],
            free: vec![],
            rhs: 1.0,
        });
        prob.constraints.push(Constraint {
            blocks: vec![BlockCoeffs { entries: vec![(1, 1, 1.0)] }],
            free: vec![],
            rhs: 1.0,
        });
        prob.objective.blocks = vec![BlockCoeffs { entries: vec![(0, 1, 0.5)] }];
        let sol = solve(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-6, "objective {}", sol.objective);
        assert!((sol.blocks[0][(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_feasibility() {
        // <I, X> = 1, X >= 0 (3x3): optimal with trace 1.
        let mut prob = SdpProblem::feasibility(vec![3], 0);
        prob.constraints.push(Constraint {
            blocks: vec![BlockCoeffs {
                entries: vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)],
            }],
            free: vec![],
            rhs: 1.0,
        });
        let sol = solve(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let tr = sol.blocks[0].trace();
        assert!((tr - 1.0).abs() < 1e-7);
        let rep = residuals(&prob, &sol).unwrap();
        assert!(rep.primal_residual < 1e-7);
        assert!(rep.min_eigenvalues[0] > -1e-9);
    }

    #[test]
    fn infeasible_detected() {
        // X >= 0 with <I, X> = -1 is infeasible.
        let mut prob = SdpProblem::feasibility(vec![2], 0);
        prob.constraints.push(Constraint {
            blocks: vec![BlockCoeffs { entries: vec![(0, 0, 1.0), (1, 1, 1.0)] }],
            free: vec![],
            rhs: -1.0,
        });
        let sol = solve(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // maximize u (free) with no constraint coupling it: unbounded.
        let mut prob = SdpProblem::feasibility(vec![1], 1);
        prob.constraints.push(Constraint {
            blocks: vec![BlockCoeffs { entries: vec![(0, 0, 1.0)] }],
            free: vec![],
            rhs: 1.0,
        });
        prob.objective.free = vec![(0, 1.0)];
        let sol = solve(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Unbounded);
    }

    #[test]
    fn project_psd_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = project_psd(&m);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12 && p[(1, 1)].abs() < 1e-12);

        // PSD input unchanged.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let pa = project_psd(&a);
        assert!((&pa - &a).amax() < 1e-10);

        // Nearest-PSD against an explicit eigen-clamp oracle.
        let r = DMatrix::from_row_slice(3, 3, &[0.5, -1.2, 0.3, -1.2, 0.1, 0.7, 0.3, 0.7, -0.4]);
        let p = project_psd(&r);
        let eig = r.symmetric_eigen();
        let mut oracle = DMatrix::zeros(3, 3);
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev > 0.0 {
                let v = eig.eigenvectors.column(k);
                oracle += ev * &v * v.transpose();
            }
        }
        assert!((&p - &oracle).amax() < 1e-12);
    }

    #[test]
    fn determinism() {
        let mut prob = SdpProblem::feasibility(vec![4], 1);
        for k in 0..4 {
            prob.constraints.push(Constraint {
                blocks: vec![BlockCoeffs { entries: vec![(k, k, 1.0), (0, k, 0.25)] }],
                free: vec![(0, if k % 2 == 0 { 1.0 } else { -0.5 })],
                rhs: 1.0 + k as f64,
            });
        }
        prob.objective.blocks = vec![BlockCoeffs { entries: vec![(0, 3, 1.0)] }];
        let a = solve(&prob, &opts()).unwrap();
        let b = solve(&prob, &opts()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        for (x, y) in a.blocks[0].iter().zip(b.blocks[0].iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
