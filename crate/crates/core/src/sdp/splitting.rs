//! Operator-splitting fallback: Douglas-Rachford iteration on the homogeneous
//! self-dual embedding, alternating a linear projection onto the embedding
//! subspace with a projection onto the cone product. Slower than the
//! interior-point path but immune to ill-conditioned Newton systems.

use super::ipm::Layout;
use super::{project_psd, SdpProblem, SdpSolution, SdpStatus, SolveOpts};
use nalgebra::{DMatrix, DVector};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Dimension guard: the one-time dense LU of (I + Q) is cubic.
const MAX_EMBED_DIM: usize = 2600;

pub(super) fn solve_admm(problem: &SdpProblem, opts: &SolveOpts) -> SdpSolution {
    let lay = Layout::new(problem);
    let p = problem.constraints.len();
    let nx = lay.nx;
    let dim = nx + p + 1;
    let mut trace = vec![format!("splitting: embed dim {dim}")];
    if dim > MAX_EMBED_DIM {
        return indeterminate(problem, &lay, trace, 0);
    }

    // Assemble A (p x nx) dense in svec coordinates, b, c_tilde.
    let mut a = DMatrix::zeros(p, nx);
    for (i, c) in problem.constraints.iter().enumerate() {
        for &(f, v) in &c.free {
            a[(i, f)] = v;
        }
        for (bi, m) in c.blocks.iter().enumerate() {
            for &(r, s, v) in &m.entries {
                let idx = lay.svec_index(bi, r, s);
                a[(i, idx)] = if r == s { v } else { SQRT2 * v };
            }
        }
    }
    let b = DVector::from_iterator(p, problem.constraints.iter().map(|c| c.rhs));
    let mut c_tilde = DVector::zeros(nx);
    for &(f, v) in &problem.objective.free {
        c_tilde[f] = -v;
    }
    for (bi, m) in problem.objective.blocks.iter().enumerate() {
        for &(r, s, v) in &m.entries {
            let idx = lay.svec_index(bi, r, s);
            c_tilde[idx] = if r == s { -v } else { -SQRT2 * v };
        }
    }

    // Q = [[0, -A^T, c], [A, 0, -b], [-c^T, b^T, 0]] (skew-symmetric).
    let mut iq = DMatrix::identity(dim, dim);
    for i in 0..p {
        for j in 0..nx {
            iq[(j, nx + i)] -= a[(i, j)];
            iq[(nx + i, j)] += a[(i, j)];
        }
    }
    for j in 0..nx {
        iq[(j, nx + p)] += c_tilde[j];
        iq[(nx + p, j)] -= c_tilde[j];
    }
    for i in 0..p {
        iq[(nx + i, nx + p)] -= b[i];
        iq[(nx + p, nx + i)] += b[i];
    }
    let lu = iq.lu();

    let mut u = DVector::zeros(dim);
    let mut v = DVector::zeros(dim);
    u[nx + p] = 1.0; // tau
    v[nx + p] = 1.0; // kappa
    // Interior start for PSD parts.
    for (bi, &d) in lay.dims.iter().enumerate() {
        for i in 0..d {
            u[lay.svec_index(bi, i, i)] = 1.0;
        }
    }

    let check_every = 50;
    for iter in 0..opts.splitting_max_iter {
        let sum = &u + &v;
        let ut = lu.solve(&sum).expect("I+Q is nonsingular");
        let cand = &ut - &v;
        let mut unew = cand.clone();
        // Cone projection on the x part (free part passes through).
        for bi in 0..lay.dims.len() {
            let m = lay.smat(cand.as_slice(), bi);
            let proj = project_psd_relaxed(&m);
            lay.store_svec(&proj, bi, unew.as_mut_slice());
        }
        if unew[nx + p] < 0.0 {
            unew[nx + p] = 0.0;
        }
        let vnew = &v - &ut + &unew;
        u = unew;
        v = vnew;

        if iter % check_every == check_every - 1 {
            let tau = u[nx + p];
            let kappa = v[nx + p];
            if tau > 1e-9 && tau > 10.0 * kappa.max(0.0) {
                // Candidate solution; measure residuals.
                let x = u.rows(0, nx) / tau;
                let yv = u.rows(nx, p) / tau;
                let z = v.rows(0, nx) / tau;
                let pres = (&a * &x - &b).amax() / (1.0 + b.amax());
                let dres = (a.transpose() * &yv + &z - &c_tilde).amax()
                    / (1.0 + c_tilde.amax());
                let pobj = c_tilde.dot(&x);
                let dobj = b.dot(&yv);
                let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
                if pres <= opts.feas_tol && dres <= opts.feas_tol && relgap <= opts.gap_tol {
                    trace.push(format!("splitting: converged at iter {iter}"));
                    let xs: Vec<f64> = x.iter().cloned().collect();
                    let zs: Vec<f64> = z.iter().cloned().collect();
                    return SdpSolution {
                        status: SdpStatus::Optimal,
                        blocks: (0..lay.dims.len()).map(|bi| lay.smat(&xs, bi)).collect(),
                        free: xs[..lay.nf].to_vec(),
                        y: yv.iter().map(|w| -w).collect(),
                        z_blocks: (0..lay.dims.len()).map(|bi| lay.smat(&zs, bi)).collect(),
                        objective: -pobj,
                        dual_objective: -dobj,
                        primal_residual: pres,
                        dual_residual: dres,
                        gap: (pobj - dobj).abs(),
                        iterations: iter,
                        used_fallback: true,
                        trace,
                    };
                }
            }
            // Certificates.
            let yv = u.rows(nx, p);
            let x = u.rows(0, nx);
            let z = v.rows(0, nx);
            let bty = b.dot(&yv);
            if bty > 1e-12 {
                let viol = (a.transpose() * &yv + &z).amax();
                if viol * (1.0 + b.amax()) / bty <= opts.feas_tol {
                    trace.push(format!("splitting: primal infeasibility at iter {iter}"));
                    let scale = 1.0 / bty;
                    let zs: Vec<f64> = z.iter().map(|w| w * scale).collect();
                    return SdpSolution {
                        status: SdpStatus::Infeasible,
                        blocks: problem
                            .block_dims
                            .iter()
                            .map(|&d| DMatrix::zeros(d, d))
                            .collect(),
                        free: vec![0.0; lay.nf],
                        y: yv.iter().map(|w| w * scale).collect(),
                        z_blocks: (0..lay.dims.len()).map(|bi| lay.smat(&zs, bi)).collect(),
                        objective: f64::NAN,
                        dual_objective: f64::NAN,
                        primal_residual: f64::NAN,
                        dual_residual: f64::NAN,
                        gap: f64::NAN,
                        iterations: iter,
                        used_fallback: true,
                        trace,
                    };
                }
            }
            let mctx = -c_tilde.dot(&x);
            if mctx > 1e-12 {
                let viol = (&a * &x).amax();
                if viol * (1.0 + c_tilde.amax()) / mctx <= opts.feas_tol {
                    trace.push(format!("splitting: unboundedness at iter {iter}"));
                    let scale = 1.0 / mctx;
                    let xs: Vec<f64> = x.iter().map(|w| w * scale).collect();
                    return SdpSolution {
                        status: SdpStatus::Unbounded,
                        blocks: (0..lay.dims.len()).map(|bi| lay.smat(&xs, bi)).collect(),
                        free: xs[..lay.nf].to_vec(),
                        y: vec![0.0; p],
                        z_blocks: lay.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
                        objective: f64::INFINITY,
                        dual_objective: f64::INFINITY,
                        primal_residual: f64::NAN,
                        dual_residual: f64::NAN,
                        gap: f64::NAN,
                        iterations: iter,
                        used_fallback: true,
                        trace,
                    };
                }
            }
        }
    }
    trace.push("splitting: iteration cap reached".to_string());
    indeterminate(problem, &lay, trace, opts.splitting_max_iter)
}

/// Projection that tolerates slight asymmetry from accumulated rounding.
fn project_psd_relaxed(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    project_psd(&sym)
}

fn indeterminate(
    problem: &SdpProblem,
    lay: &Layout,
    trace: Vec<String>,
    iterations: usize,
) -> SdpSolution {
    SdpSolution {
        status: SdpStatus::Indeterminate,
        blocks: problem.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
        free: vec![0.0; lay.nf],
        y: vec![0.0; problem.constraints.len()],
        z_blocks: problem.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
        objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations,
        used_fallback: true,
        trace,
    }
}
