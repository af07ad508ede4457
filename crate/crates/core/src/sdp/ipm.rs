//! Homogeneous self-dual embedding interior-point method with Nesterov-Todd
//! scaling and Mehrotra predictor-corrector steps.
//!
//! Internal standard form: min c^T x s.t. A x = b, x in K, where K is a
//! product of a free block and PSD blocks in scaled-vec (svec) coordinates.
//! The embedding searches for (x, y, z, tau, kappa) with
//!   A x - b tau = 0,   -A^T y - z + c tau = 0,   b^T y - c^T x - kappa = 0,
//! which yields either a solution (tau > 0) or an infeasibility /
//! unboundedness certificate (kappa > 0). Data is row/norm equilibrated on
//! entry; the Newton solves carry one step of iterative refinement.

use super::{SdpProblem, SdpSolution, SdpStatus, SolveOpts};
use nalgebra::{DMatrix, DVector};

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub(super) struct Layout {
    pub nf: usize,
    pub dims: Vec<usize>,
    pub offsets: Vec<usize>,
    pub nx: usize,
    pub nu: f64,
}

impl Layout {
    pub fn new(problem: &SdpProblem) -> Self {
        let nf = problem.num_free;
        let dims = problem.block_dims.clone();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut at = nf;
        for &d in &dims {
            offsets.push(at);
            at += d * (d + 1) / 2;
        }
        Layout { nf, dims: dims.clone(), offsets, nx: at, nu: dims.iter().sum::<usize>() as f64 }
    }

    pub fn svec_index(&self, block: usize, i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        self.offsets[block] + j * (j + 1) / 2 + i
    }

    pub fn smat(&self, x: &[f64], block: usize) -> DMatrix<f64> {
        let d = self.dims[block];
        let base = self.offsets[block];
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let v = x[base + j * (j + 1) / 2 + i];
                if i == j {
                    m[(i, i)] = v;
                } else {
                    m[(i, j)] = v / SQRT2;
                    m[(j, i)] = v / SQRT2;
                }
            }
        }
        m
    }

    pub fn store_svec(&self, m: &DMatrix<f64>, block: usize, out: &mut [f64]) {
        let d = self.dims[block];
        let base = self.offsets[block];
        for j in 0..d {
            for i in 0..=j {
                out[base + j * (j + 1) / 2 + i] =
                    if i == j { m[(i, i)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
            }
        }
    }
}

/// Sparse constraint row over the svec coordinates (split into free part and
/// per-block symmetric entries kept in (i, j, v) form).
pub(super) struct Row {
    pub free: Vec<(usize, f64)>,
    /// (block, i, j, v) with i <= j; contributes v*sqrt2 to svec coord if i<j.
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl Row {
    fn from_parts(blocks: &[super::BlockCoeffs], free: &[(usize, f64)]) -> Self {
        let mut entries = Vec::new();
        for (b, m) in blocks.iter().enumerate() {
            for &(i, j, v) in &m.entries {
                if v != 0.0 {
                    entries.push((b, i, j, v));
                }
            }
        }
        Row { free: free.to_vec(), entries }
    }

    fn scaled(&self, factor: f64) -> Row {
        Row {
            free: self.free.iter().map(|&(f, v)| (f, v * factor)).collect(),
            entries: self.entries.iter().map(|&(b, i, j, v)| (b, i, j, v * factor)).collect(),
        }
    }

    fn max_abs(&self) -> f64 {
        let a = self.free.iter().fold(0.0f64, |acc, &(_, v)| acc.max(v.abs()));
        self.entries.iter().fold(a, |acc, &(_, _, _, v)| acc.max(v.abs()))
    }

    /// <A, smat(xs)> + a^T x_f in svec coordinates.
    fn dot(&self, lay: &Layout, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(f, v) in &self.free {
            acc += v * x[f];
        }
        for &(b, i, j, v) in &self.entries {
            let idx = lay.svec_index(b, i, j);
            acc += if i == j { v * x[idx] } else { SQRT2 * v * x[idx] };
        }
        acc
    }

    /// x += w * svec(A).
    fn axpy_into(&self, lay: &Layout, w: f64, x: &mut [f64]) {
        if w == 0.0 {
            return;
        }
        for &(f, v) in &self.free {
            x[f] += w * v;
        }
        for &(b, i, j, v) in &self.entries {
            let idx = lay.svec_index(b, i, j);
            x[idx] += if i == j { w * v } else { SQRT2 * w * v };
        }
    }

    /// <A, M_block> against dense per-block matrices (PSD part only).
    fn dot_mats(&self, mats: &[DMatrix<f64>]) -> f64 {
        let mut acc = 0.0;
        for &(b, i, j, v) in &self.entries {
            acc += if i == j { v * mats[b][(i, i)] } else { 2.0 * v * mats[b][(i, j)] };
        }
        acc
    }
}

struct Scaling {
    r: Vec<DMatrix<f64>>,
    rinv: Vec<DMatrix<f64>>,
    sigma: Vec<DVector<f64>>,
}

struct State {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    kappa: f64,
}

pub(super) fn solve_hsde(problem: &SdpProblem, opts: &SolveOpts) -> SdpSolution {
    let lay = Layout::new(problem);
    let p = problem.constraints.len();
    let rows0: Vec<Row> = problem
        .constraints
        .iter()
        .map(|c| Row::from_parts(&c.blocks, &c.free))
        .collect();
    let b0: Vec<f64> = problem.constraints.iter().map(|c| c.rhs).collect();
    let obj_row = Row::from_parts(&problem.objective.blocks, &problem.objective.free);
    let mut c0 = vec![0.0; lay.nx];
    obj_row.axpy_into(&lay, -1.0, &mut c0);

    // Equilibration: per-row scale, then global b and c scales.
    let rscale: Vec<f64> = rows0.iter().map(|r| r.max_abs().max(1e-12)).collect();
    let rows: Vec<Row> = rows0.iter().zip(&rscale).map(|(r, &s)| r.scaled(1.0 / s)).collect();
    let mut b: Vec<f64> = b0.iter().zip(&rscale).map(|(v, &s)| v / s).collect();
    let sb = b.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for v in &mut b {
        *v /= sb;
    }
    let sc = c0.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let c_tilde: Vec<f64> = c0.iter().map(|v| v / sc).collect();

    let bnorm = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cnorm = c_tilde.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let unscale = Unscale { rscale, sb, sc };

    let mut st = State {
        x: init_identity(&lay),
        y: vec![0.0; p],
        z: init_identity(&lay),
        tau: 1.0,
        kappa: 1.0,
    };
    for f in 0..lay.nf {
        st.z[f] = 0.0;
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut best_progress = f64::INFINITY;
    let mut since_best = 0usize;

    for iter in 0..opts.max_iter {
        iterations = iter;
        // Keep the homogeneous iterate normalized.
        let scale = 1.0 / (st.tau + st.kappa).max(1e-300);
        for v in st.x.iter_mut().chain(st.y.iter_mut()).chain(st.z.iter_mut()) {
            *v *= scale;
        }
        st.tau *= scale;
        st.kappa *= scale;

        // Residuals.
        let rp: Vec<f64> = (0..p)
            .map(|i| b[i] * st.tau - rows[i].dot(&lay, &st.x))
            .collect();
        // rd is the negated dual equation residual: A^T y + z - c tau, so a
        // Newton step drives the true residual toward zero.
        let mut rd = vec![0.0; lay.nx];
        for (i, v) in rd.iter_mut().enumerate() {
            *v = st.z[i] - c_tilde[i] * st.tau;
        }
        for (row, &yi) in rows.iter().zip(&st.y) {
            row.axpy_into(&lay, yi, &mut rd);
        }
        let bty: f64 = b.iter().zip(&st.y).map(|(a, c)| a * c).sum();
        let ctx: f64 = c_tilde.iter().zip(&st.x).map(|(a, c)| a * c).sum();
        let rg = st.kappa + ctx - bty;
        let xz: f64 = st.x.iter().zip(&st.z).map(|(a, c)| a * c).sum();
        let mu = (xz + st.tau * st.kappa) / (lay.nu + 1.0);

        // Candidate solution checks.
        if st.tau > 1e-12 {
            let inv_tau = 1.0 / st.tau;
            let pres = rp.iter().fold(0.0f64, |a, v| a.max(v.abs())) * inv_tau / (1.0 + bnorm);
            let dres = rd.iter().fold(0.0f64, |a, v| a.max(v.abs())) * inv_tau / (1.0 + cnorm);
            let pobj = ctx * inv_tau;
            let dobj = bty * inv_tau;
            let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
            if opts.trace {
                trace.push(format!(
                    "iter {iter} mu {mu:.3e} tau {:.3e} kappa {:.3e} pres {pres:.3e} dres {dres:.3e} gap {relgap:.3e}",
                    st.tau, st.kappa
                ));
            }
            if pres <= opts.feas_tol && dres <= opts.feas_tol && relgap <= opts.gap_tol {
                return extract_optimal(&lay, &st, &rows0, &b0, &c0, &unscale, iter, trace, false);
            }
            let progress = pres.max(dres).max(relgap);
            if progress < 0.9 * best_progress {
                best_progress = progress;
                since_best = 0;
            } else {
                since_best += 1;
            }
            // A collapsing tau that turns around is progress too: credit
            // recovery so mid-flight regime changes are not cut short.
            if st.tau < 0.05 && st.kappa > 0.5 {
                since_best = since_best.saturating_sub(1);
            }
        } else if opts.trace {
            trace.push(format!(
                "iter {iter} mu {mu:.3e} tau {:.3e} kappa {:.3e} (ray regime)",
                st.tau, st.kappa
            ));
        }

        // Certificate checks (on scaled data; certificates unscale exactly).
        if bty > 1e-14 {
            let mut res = vec![0.0; lay.nx];
            for (row, &yi) in rows.iter().zip(&st.y) {
                row.axpy_into(&lay, yi, &mut res);
            }
            for i in 0..lay.nx {
                res[i] += st.z[i];
            }
            let viol = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if viol * (1.0 + bnorm) / bty <= opts.feas_tol {
                return extract_infeasible(problem, &lay, &st, &rows0, &b0, &unscale, iter, trace);
            }
        }
        let minus_ctx = -ctx;
        if minus_ctx > 1e-14 {
            let viol = (0..p)
                .map(|i| rows[i].dot(&lay, &st.x).abs())
                .fold(0.0f64, f64::max);
            if viol * (1.0 + cnorm) / minus_ctx <= opts.feas_tol {
                return extract_unbounded(&lay, &st, &rows0, &c0, &unscale, iter, trace);
            }
        }
        if mu < 1e-18 || since_best > 150 {
            break;
        }

        let Some(scaling) = compute_scaling(&lay, &st) else {
            break;
        };
        let Some(factor) =
            NewtonFactor::build(&lay, &rows, &b, &c_tilde, &scaling, st.kappa / st.tau)
        else {
            break;
        };

        // Predictor (affine) direction.
        let e_aff: Vec<DMatrix<f64>> = scaling
            .sigma
            .iter()
            .map(|s| -DMatrix::from_diagonal(&s.component_mul(s)))
            .collect();
        let aff = factor.solve(
            &lay,
            &rows,
            &c_tilde,
            &scaling,
            &st,
            &rp,
            &rd,
            rg,
            &e_aff,
            -st.tau * st.kappa,
        );
        let alpha_aff = max_step(&lay, &st, &aff, 1.0);
        let mu_aff = {
            let mut xs = st.x.clone();
            let mut zs = st.z.clone();
            for i in 0..lay.nx {
                xs[i] += alpha_aff * aff.dx[i];
                zs[i] += alpha_aff * aff.dz[i];
            }
            let xz: f64 = xs.iter().zip(&zs).map(|(a, c)| a * c).sum();
            (xz + (st.tau + alpha_aff * aff.dtau) * (st.kappa + alpha_aff * aff.dkappa))
                / (lay.nu + 1.0)
        };
        let sigma = ((mu_aff / mu).max(0.0).powi(3)).clamp(1e-8, 0.99);

        // Corrector: combined direction.
        let mut e_comb = Vec::with_capacity(lay.dims.len());
        for (bidx, d) in lay.dims.iter().enumerate() {
            let dxa = lay.smat(&aff.dx, bidx);
            let dza = lay.smat(&aff.dz, bidx);
            let dxs = &scaling.rinv[bidx] * dxa * scaling.rinv[bidx].transpose();
            let dzs = scaling.r[bidx].transpose() * dza * &scaling.r[bidx];
            let cross = 0.5 * (&dxs * &dzs + &dzs * &dxs);
            let mut t = -cross;
            let sig = &scaling.sigma[bidx];
            for i in 0..*d {
                t[(i, i)] += sigma * mu - sig[i] * sig[i];
            }
            e_comb.push(t);
        }
        let eta = 1.0 - sigma;
        let rp_c: Vec<f64> = rp.iter().map(|v| eta * v).collect();
        let rd_c: Vec<f64> = rd.iter().map(|v| eta * v).collect();
        let dir = factor.solve(
            &lay,
            &rows,
            &c_tilde,
            &scaling,
            &st,
            &rp_c,
            &rd_c,
            eta * rg,
            &e_comb,
            sigma * mu - st.tau * st.kappa - aff.dtau * aff.dkappa,
        );
        if opts.trace {
            // Direction quality diagnostic: relative E2 residual.
            let mut e2 = vec![0.0; lay.nx];
            for (row, dyi) in rows.iter().zip(&dir.dy) {
                row.axpy_into(&lay, -dyi, &mut e2);
            }
            for i in 0..lay.nx {
                e2[i] += c_tilde[i] * dir.dtau - dir.dz[i] - eta * rd[i];
            }
            let e2n = e2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let e1n = (0..p)
                .map(|i| (rows[i].dot(&lay, &dir.dx) - b[i] * dir.dtau - rp_c[i]).abs())
                .fold(0.0f64, f64::max);
            trace.push(format!("   dir: e1 {e1n:.3e} e2 {e2n:.3e} sigma {sigma:.3e}"));
        }
        let alpha = 0.99 * max_step(&lay, &st, &dir, 1.0 / 0.99);
        for i in 0..lay.nx {
            st.x[i] += alpha * dir.dx[i];
            st.z[i] += alpha * dir.dz[i];
        }
        for f in 0..lay.nf {
            st.z[f] = 0.0;
        }
        for (yi, d) in st.y.iter_mut().zip(&dir.dy) {
            *yi += alpha * d;
        }
        st.tau += alpha * dir.dtau;
        st.kappa += alpha * dir.dkappa;
        if alpha < 1e-10 {
            break;
        }
    }

    SdpSolution {
        status: SdpStatus::Indeterminate,
        blocks: lay
            .dims
            .iter()
            .enumerate()
            .map(|(b, _)| lay.smat(&st.x, b) * (unscale.sb / st.tau.max(1e-300)))
            .collect(),
        free: st.x[..lay.nf].iter().map(|v| v * unscale.sb / st.tau.max(1e-300)).collect(),
        y: st.y.iter().map(|v| -v / st.tau.max(1e-300)).collect(),
        z_blocks: lay
            .dims
            .iter()
            .enumerate()
            .map(|(b, _)| lay.smat(&st.z, b) * (unscale.sc / st.tau.max(1e-300)))
            .collect(),
        objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations,
        used_fallback: false,
        trace,
    }
}

struct Unscale {
    rscale: Vec<f64>,
    sb: f64,
    sc: f64,
}

fn init_identity(lay: &Layout) -> Vec<f64> {
    let mut x = vec![0.0; lay.nx];
    for (b, &d) in lay.dims.iter().enumerate() {
        for i in 0..d {
            x[lay.svec_index(b, i, i)] = 1.0;
        }
    }
    x
}

fn compute_scaling(lay: &Layout, st: &State) -> Option<Scaling> {
    let mut r = Vec::with_capacity(lay.dims.len());
    let mut rinv = Vec::with_capacity(lay.dims.len());
    let mut sigma = Vec::with_capacity(lay.dims.len());
    for b in 0..lay.dims.len() {
        let x = lay.smat(&st.x, b);
        let z = lay.smat(&st.z, b);
        let lx = x.cholesky()?;
        let lz = z.cholesky()?;
        // lz^T lx = U S V^T; R = lx V S^{-1/2}; R^{-1} = S^{1/2} V^T lx^{-1}.
        let m = lz.l().transpose() * lx.l();
        let svd = m.svd(true, true);
        let vt = svd.v_t.as_ref()?;
        let s = &svd.singular_values;
        if s.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return None;
        }
        let mut v = vt.transpose();
        for (j, &sv) in s.iter().enumerate() {
            let f = 1.0 / sv.sqrt();
            for i in 0..v.nrows() {
                v[(i, j)] *= f;
            }
        }
        let rb = lx.l() * v;
        let rib = {
            let mut vt_scaled = vt.clone_owned();
            for (i, &sv) in s.iter().enumerate() {
                let f = sv.sqrt();
                for j in 0..vt_scaled.ncols() {
                    vt_scaled[(i, j)] *= f;
                }
            }
            let lt = lx.l().transpose();
            lt.solve_upper_triangular(&vt_scaled.transpose())
                .map(|sol| sol.transpose())?
        };
        r.push(rb);
        rinv.push(rib);
        sigma.push(DVector::from_iterator(s.len(), s.iter().cloned()));
    }
    Some(Scaling { r, rinv, sigma })
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct NewtonFactor {
    /// LU of the full bordered KKT matrix [[M, B], [C, D]].
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Exact bordered matrix kept for iterative refinement.
    k_true: DMatrix<f64>,
    p: usize,
    nf: usize,
}

impl NewtonFactor {
    fn build(
        lay: &Layout,
        rows: &[Row],
        b: &[f64],
        c_tilde: &[f64],
        sc: &Scaling,
        kot: f64,
    ) -> Option<Self> {
        let p = rows.len();
        let nf = lay.nf;
        let mut m = DMatrix::zeros(p, p);
        let w: Vec<DMatrix<f64>> = sc.r.iter().map(|r| r * r.transpose()).collect();
        for j in 0..p {
            let bmats = apply_w_to_row(lay, &rows[j], &w);
            for i in 0..=j {
                let v = rows[i].dot_mats(&bmats);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let g_c = apply_w_opt(lay, c_tilde, &w);
        let cgc: f64 = c_tilde[nf..].iter().zip(&g_c[nf..]).map(|(a, c)| a * c).sum();
        let mut u1 = DVector::zeros(p);
        for i in 0..p {
            u1[i] = -(rows[i].dot(lay, &g_c) + b[i]);
        }
        // Full bordered KKT matrix:
        //   [ M      A_f    u1  ]
        //   [ -A_f^T 0      c_f ]
        //   [ w1^T  -c_f^T  s   ]
        let dim = p + nf + 1;
        let mut k = DMatrix::zeros(dim, dim);
        for i in 0..p {
            for j in 0..p {
                k[(i, j)] = m[(i, j)];
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for &(f, v) in &row.free {
                k[(i, p + f)] = v;
                k[(p + f, i)] = -v;
            }
            k[(i, p + nf)] = u1[i];
            // w1 = b - A_s G c_s = u1 + 2 b.
            k[(p + nf, i)] = u1[i] + 2.0 * b[i];
        }
        for f in 0..nf {
            k[(p + f, p + nf)] = c_tilde[f];
            k[(p + nf, p + f)] = -c_tilde[f];
        }
        k[(p + nf, p + nf)] = cgc + kot;
        let k_true = k.clone();
        // Quasi-definite static regularization: dependent constraint rows
        // (legal inputs) would otherwise make K exactly singular. Iterative
        // refinement against k_true restores accuracy on consistent systems.
        let scale = (0..p).map(|i| k_true[(i, i)].abs()).fold(0.0f64, f64::max).max(1.0);
        let reg = 1e-11 * scale;
        for i in 0..p {
            k[(i, i)] += reg;
        }
        for f in 0..nf {
            k[(p + f, p + f)] -= reg;
        }
        let lu = k.lu();
        if (0..dim).any(|i| lu.u()[(i, i)] == 0.0) {
            return None;
        }
        Some(NewtonFactor { lu, k_true, p, nf })
    }

    /// Solve with iterative refinement against the exact bordered matrix.
    fn refined_solve(
        &self,
        rhs1: &DVector<f64>,
        rhs2: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let dim = self.p + self.nf + 1;
        let mut rhs = DVector::zeros(dim);
        for i in 0..self.p {
            rhs[i] = rhs1[i];
        }
        for f in 0..=self.nf {
            rhs[self.p + f] = rhs2[f];
        }
        let mut sol = self.lu.solve(&rhs).expect("bordered KKT solvable");
        let mut best = sol.clone();
        let mut best_err = f64::INFINITY;
        for _ in 0..3 {
            let r = &rhs - &self.k_true * &sol;
            let err = r.amax();
            if err < best_err {
                best_err = err;
                best = sol.clone();
            }
            if err <= 1e-14 * rhs.amax().max(1e-300) {
                break;
            }
            match self.lu.solve(&r) {
                Some(d) => sol += d,
                None => break,
            }
        }
        let sol = best;
        let dy = DVector::from_iterator(self.p, (0..self.p).map(|i| sol[i]));
        let small = DVector::from_iterator(self.nf + 1, (0..=self.nf).map(|f| sol[self.p + f]));
        (dy, small)
    }

    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        lay: &Layout,
        rows: &[Row],
        c_tilde: &[f64],
        sc: &Scaling,
        st: &State,
        rp: &[f64],
        rd: &[f64],
        rg: f64,
        e_mats: &[DMatrix<f64>],
        rk: f64,
    ) -> Direction {
        let p = rows.len();
        let nf = lay.nf;
        // Complementarity: sym(lambda o (Dx + Dz)) = T per block, so
        // (Dx + Dz)_ij = 2 T_ij / (sigma_i + sigma_j), and
        // r4 = svec(R (Dx + Dz) R^T); t1 = r4 + G rd_s.
        let mut t1 = vec![0.0; lay.nx];
        for (bidx, t) in e_mats.iter().enumerate() {
            let sig = &sc.sigma[bidx];
            let d = sig.len();
            let mut e = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    e[(i, j)] = 2.0 * t[(i, j)] / (sig[i] + sig[j]);
                }
            }
            let m = &sc.r[bidx] * e * sc.r[bidx].transpose();
            lay.store_svec(&m, bidx, &mut t1);
        }
        let w: Vec<DMatrix<f64>> = sc.r.iter().map(|r| r * r.transpose()).collect();
        let g_rd = apply_w_opt(lay, rd, &w);
        for i in nf..lay.nx {
            t1[i] += g_rd[i];
        }
        let mut rhs1 = DVector::zeros(p);
        for i in 0..p {
            rhs1[i] = rp[i] - rows[i].dot(lay, &t1);
        }
        let ct1: f64 = c_tilde[nf..].iter().zip(&t1[nf..]).map(|(a, c)| a * c).sum();
        let mut rhs_small = DVector::zeros(nf + 1);
        for f in 0..nf {
            rhs_small[f] = rd[f];
        }
        rhs_small[nf] = rg + ct1 + rk / st.tau;

        let (dy_vec, small) = self.refined_solve(&rhs1, &rhs_small);
        let dxf: Vec<f64> = (0..nf).map(|f| small[f]).collect();
        let dtau = small[nf];

        let mut at_dy = vec![0.0; lay.nx];
        for (row, dyi) in rows.iter().zip(dy_vec.iter()) {
            row.axpy_into(lay, *dyi, &mut at_dy);
        }
        for f in 0..nf {
            at_dy[f] = 0.0;
        }
        let mut pre = vec![0.0; lay.nx];
        for i in nf..lay.nx {
            pre[i] = at_dy[i] - c_tilde[i] * dtau;
        }
        let g_pre = apply_w_opt(lay, &pre, &w);
        let mut dx = vec![0.0; lay.nx];
        dx[..nf].copy_from_slice(&dxf);
        for i in nf..lay.nx {
            dx[i] = t1[i] + g_pre[i];
        }
        let mut dz = vec![0.0; lay.nx];
        for i in nf..lay.nx {
            dz[i] = -pre[i] - rd[i];
        }
        let dkappa = (rk - st.kappa * dtau) / st.tau;
        Direction { dx, dy: dy_vec.iter().cloned().collect(), dz, dtau, dkappa }
    }
}

/// Per-block W A W for a sparse row, as dense matrices.
fn apply_w_to_row(lay: &Layout, row: &Row, w: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = lay.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    for &(b, i, j, v) in &row.entries {
        let wb = &w[b];
        let d = lay.dims[b];
        let col_i = wb.column(i);
        let col_j = wb.column(j);
        let target = &mut out[b];
        if i == j {
            for r in 0..d {
                let wi = col_i[r] * v;
                for c in 0..d {
                    target[(r, c)] += wi * col_i[c];
                }
            }
        } else {
            for r in 0..d {
                let wi = col_i[r] * v;
                let wj = col_j[r] * v;
                for c in 0..d {
                    target[(r, c)] += wi * col_j[c] + wj * col_i[c];
                }
            }
        }
    }
    out
}

/// G v = svec(W smat(v) W) on the PSD part; free part zeroed.
fn apply_w_opt(lay: &Layout, v: &[f64], w: &[DMatrix<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; lay.nx];
    for b in 0..lay.dims.len() {
        let m = lay.smat(v, b);
        let res = &w[b] * m * &w[b];
        lay.store_svec(&res, b, &mut out);
    }
    out
}

/// Largest step alpha <= cap keeping X, Z in the cone and tau, kappa >= 0.
fn max_step(lay: &Layout, st: &State, dir: &Direction, cap: f64) -> f64 {
    let mut alpha = cap;
    if dir.dtau < 0.0 {
        alpha = alpha.min(-st.tau / dir.dtau);
    }
    if dir.dkappa < 0.0 {
        alpha = alpha.min(-st.kappa / dir.dkappa);
    }
    for b in 0..lay.dims.len() {
        alpha = alpha.min(psd_step(&lay.smat(&st.x, b), &lay.smat(&dir.dx, b)));
        alpha = alpha.min(psd_step(&lay.smat(&st.z, b), &lay.smat(&dir.dz, b)));
    }
    alpha.max(0.0)
}

fn psd_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    match x.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let a = l.solve_lower_triangular(dx).unwrap_or_else(|| dx.clone());
            let s = l
                .solve_lower_triangular(&a.transpose())
                .unwrap_or_else(|| a.transpose());
            let sym = 0.5 * (&s + &s.transpose());
            let min_eig =
                sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_eig >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / min_eig
            }
        }
        None => 0.0,
    }
}

#[allow(clippy::too_many_arguments)]
fn extract_optimal(
    lay: &Layout,
    st: &State,
    rows0: &[Row],
    b0: &[f64],
    c0: &[f64],
    un: &Unscale,
    iterations: usize,
    trace: Vec<String>,
    used_fallback: bool,
) -> SdpSolution {
    let inv_tau = 1.0 / st.tau;
    // Unscale: x_orig = sb * x_hat; y_orig_i = sc * y_hat_i / rscale_i; the
    // sign flip converts the internal dual to the external convention
    // (sum y_i A_i - C = Z >= 0 for the maximization problem).
    let x: Vec<f64> = st.x.iter().map(|v| v * inv_tau * un.sb).collect();
    let y_ext: Vec<f64> = st
        .y
        .iter()
        .zip(&un.rscale)
        .map(|(v, &r)| -v * inv_tau * un.sc / r)
        .collect();
    let blocks: Vec<DMatrix<f64>> = (0..lay.dims.len()).map(|bi| lay.smat(&x, bi)).collect();
    let free: Vec<f64> = x[..lay.nf].to_vec();
    // Recompute z from the external dual identity z = A^T y_ext - c_orig
    // (free components vanish up to the dual residual).
    let mut z_ext = vec![0.0; lay.nx];
    for (row, &yi) in rows0.iter().zip(&y_ext) {
        // external y corresponds to -y_int; A^T y_ext - c = z with c = -c0.
        row.axpy_into(lay, yi, &mut z_ext);
    }
    for i in 0..lay.nx {
        z_ext[i] += c0[i]; // c0 = -C, so z = A^T y + c0 = A^T y - C.
    }
    let z_blocks: Vec<DMatrix<f64>> = (0..lay.dims.len()).map(|bi| lay.smat(&z_ext, bi)).collect();
    let ctx: f64 = c0.iter().zip(&x).map(|(a, c)| a * c).sum();
    let bty_ext: f64 = b0.iter().zip(&y_ext).map(|(a, c)| a * c).sum();
    let pres = (0..rows0.len())
        .map(|i| (rows0[i].dot(lay, &x) - b0[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    // The PSD part of z is exact by construction, so the dual residual is
    // the free-variable stationarity plus any Z-negativity.
    let dres = {
        let mut acc2 = 0.0;
        for f in 0..lay.nf {
            let mut acc = c0[f];
            for (row, &yi) in rows0.iter().zip(&y_ext) {
                for &(ff, v) in &row.free {
                    if ff == f {
                        acc += v * yi;
                    }
                }
            }
            acc2 += acc * acc;
        }
        let zneg: f64 = z_blocks
            .iter()
            .filter(|zb| zb.nrows() > 0)
            .map(|zb| {
                let min = zb
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                (-min).max(0.0)
            })
            .fold(0.0, f64::max);
        (acc2.sqrt().powi(2) + zneg * zneg).sqrt()
    };
    SdpSolution {
        status: SdpStatus::Optimal,
        blocks,
        free,
        y: y_ext,
        z_blocks,
        objective: -ctx,
        dual_objective: bty_ext,
        primal_residual: pres,
        dual_residual: dres,
        gap: (-ctx - bty_ext).abs(),
        iterations,
        used_fallback,
        trace,
    }
}

fn extract_infeasible(
    problem: &SdpProblem,
    lay: &Layout,
    st: &State,
    rows0: &[Row],
    b0: &[f64],
    un: &Unscale,
    iterations: usize,
    trace: Vec<String>,
) -> SdpSolution {
    // Farkas ray in original data: y_orig_i = y_i / rscale_i, normalized to
    // b0^T y = 1; then sum_i y_i A_i = -Z with Z >= 0 (approximately).
    let mut y: Vec<f64> = st.y.iter().zip(&un.rscale).map(|(v, &r)| v / r).collect();
    let bty: f64 = b0.iter().zip(&y).map(|(a, c)| a * c).sum();
    let scale = 1.0 / bty;
    for v in &mut y {
        *v *= scale;
    }
    let mut z = vec![0.0; lay.nx];
    for (row, &yi) in rows0.iter().zip(&y) {
        row.axpy_into(lay, -yi, &mut z);
    }
    let z_blocks: Vec<DMatrix<f64>> = (0..lay.dims.len()).map(|bi| lay.smat(&z, bi)).collect();
    SdpSolution {
        status: SdpStatus::Infeasible,
        blocks: problem.block_dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
        free: vec![0.0; lay.nf],
        y,
        z_blocks,
        objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations,
        used_fallback: false,
        trace,
    }
}

fn extract_unbounded(
    lay: &Layout,
    st: &State,
    rows0: &[Row],
    c0: &[f64],
    un: &Unscale,
    iterations: usize,
    trace: Vec<String>,
) -> SdpSolution {
    // Improving ray: A x = 0, x in K, external objective value 1. Scaling by
    // sb preserves A x = 0; renormalize against the original objective.
    let mut x: Vec<f64> = st.x.iter().map(|v| v * un.sb).collect();
    let minus_ctx: f64 = -c0.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>();
    let scale = 1.0 / minus_ctx;
    for v in &mut x {
        *v *= scale;
    }
    let blocks: Vec<DMatrix<f64>> = (0..lay.dims.len()).map(|bi| lay.smat(&x, bi)).collect();
    let _ = rows0;
    SdpSolution {
        status: SdpStatus::Unbounded,
        blocks,
        free: x[..lay.nf].to_vec(),
        y: vec![0.0; st.y.len()],
        z_blocks: lay.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
        objective: f64::INFINITY,
        dual_objective: f64::INFINITY,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        iterations,
        used_fallback: false,
        trace,
    }
}

#[cfg(test)]
mod newton_tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    // The computed direction must satisfy the five linearized HSDE equations.
    #[test]
    fn direction_satisfies_linearized_system() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let d = 5;
        let p = 7;
        let nf = 2;
        let mut problem = super::super::SdpProblem::feasibility(vec![d], nf);
        for _ in 0..p {
            let mut entries = Vec::new();
            for _ in 0..4 {
                let i = rng.gen_range(0..d);
                let j = rng.gen_range(0..d);
                let (i, j) = (i.min(j), i.max(j));
                entries.push((i, j, rng.gen_range(-2.0..2.0f64)));
            }
            entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            entries.dedup_by_key(|e| (e.0, e.1));
            problem.constraints.push(super::super::Constraint {
                blocks: vec![super::super::BlockCoeffs { entries }],
                free: vec![(0, rng.gen_range(-1.0..1.0)), (1, rng.gen_range(-1.0..1.0))],
                rhs: rng.gen_range(-2.0..2.0),
            });
        }
        problem.objective.blocks =
            vec![super::super::BlockCoeffs { entries: vec![(0, 1, 1.0), (2, 2, -0.5)] }];
        problem.objective.free = vec![(0, 0.3)];

        let lay = Layout::new(&problem);
        let rows: Vec<Row> = problem
            .constraints
            .iter()
            .map(|c| Row::from_parts(&c.blocks, &c.free))
            .collect();
        let b: Vec<f64> = problem.constraints.iter().map(|c| c.rhs).collect();
        let obj_row = Row::from_parts(&problem.objective.blocks, &problem.objective.free);
        let mut c_tilde = vec![0.0; lay.nx];
        obj_row.axpy_into(&lay, -1.0, &mut c_tilde);

        // Random strictly interior state.
        let mut st = State {
            x: init_identity(&lay),
            y: (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            z: init_identity(&lay),
            tau: 0.8,
            kappa: 0.6,
        };
        let l = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.4..0.4));
        let xmat = &l * l.transpose() + DMatrix::identity(d, d);
        lay.store_svec(&xmat, 0, &mut st.x);
        let l2 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.4..0.4));
        let zmat = &l2 * l2.transpose() + DMatrix::identity(d, d);
        lay.store_svec(&zmat, 0, &mut st.z);
        st.x[0] = 0.7;
        st.x[1] = -0.3;

        let rp: Vec<f64> = (0..p).map(|i| b[i] * st.tau - rows[i].dot(&lay, &st.x)).collect();
        let mut rd = vec![0.0; lay.nx];
        for (i, v) in rd.iter_mut().enumerate() {
            *v = st.z[i] - c_tilde[i] * st.tau;
        }
        for (row, &yi) in rows.iter().zip(&st.y) {
            row.axpy_into(&lay, yi, &mut rd);
        }
        let bty: f64 = b.iter().zip(&st.y).map(|(a, c)| a * c).sum();
        let ctx: f64 = c_tilde.iter().zip(&st.x).map(|(a, c)| a * c).sum();
        let rg = st.kappa + ctx - bty;

        let scaling = compute_scaling(&lay, &st).expect("interior state");
        let factor = NewtonFactor::build(&lay, &rows, &b, &c_tilde, &scaling, st.kappa / st.tau)
            .expect("factorizable");
        let e: Vec<DMatrix<f64>> = scaling
            .sigma
            .iter()
            .map(|sg| -DMatrix::from_diagonal(&sg.component_mul(sg)))
            .collect();
        let rk = -st.tau * st.kappa;
        let dir = factor.solve(&lay, &rows, &c_tilde, &scaling, &st, &rp, &rd, rg, &e, rk);

        // (E1) A dx - b dtau = rp.
        for i in 0..p {
            let lhs = rows[i].dot(&lay, &dir.dx) - b[i] * dir.dtau;
            assert!((lhs - rp[i]).abs() < 1e-8, "E1 row {i}: {lhs} vs {}", rp[i]);
        }
        // (E2) -A^T dy - dz + c dtau = rd (free components too).
        let mut lhs2 = vec![0.0; lay.nx];
        for (row, dyi) in rows.iter().zip(&dir.dy) {
            row.axpy_into(&lay, -dyi, &mut lhs2);
        }
        for i in 0..lay.nx {
            lhs2[i] += c_tilde[i] * dir.dtau - dir.dz[i];
            assert!((lhs2[i] - rd[i]).abs() < 1e-8, "E2 coord {i}: {} vs {}", lhs2[i], rd[i]);
        }
        // (E3) b^T dy - c^T dx - dkappa = rg.
        let lhs3: f64 = b.iter().zip(&dir.dy).map(|(a, c)| a * c).sum::<f64>()
            - c_tilde.iter().zip(&dir.dx).map(|(a, c)| a * c).sum::<f64>()
            - dir.dkappa;
        assert!((lhs3 - rg).abs() < 1e-8, "E3: {lhs3} vs {rg}");
        // (E4) scaled complementarity: Dx + Dz = E elementwise-scaled.
        let dxa = lay.smat(&dir.dx, 0);
        let dza = lay.smat(&dir.dz, 0);
        let dxs = &scaling.rinv[0] * dxa * scaling.rinv[0].transpose();
        let dzs = scaling.r[0].transpose() * dza * &scaling.r[0];
        let sum = dxs + dzs;
        let sig = &scaling.sigma[0];
        for i in 0..d {
            for j in 0..d {
                let expect = 2.0 * e[0][(i, j)] / (sig[i] + sig[j]);
                assert!(
                    (sum[(i, j)] - expect).abs() < 1e-8,
                    "E4 ({i},{j}): {} vs {expect}",
                    sum[(i, j)]
                );
            }
        }
        // (E5) kappa dtau + tau dkappa = rk.
        let lhs5 = st.kappa * dir.dtau + st.tau * dir.dkappa;
        assert!((lhs5 - rk).abs() < 1e-8, "E5: {lhs5} vs {rk}");
    }
}
