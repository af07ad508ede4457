//! Biforms: polynomials homogeneous of fixed even degree separately in two
//! variable groups x and y, together with the sphere-moment integration that
//! turns the bi-sphere T = S^{n-1} x S^{m-1} into computable inner products,
//! and the averaging operator T relating the L^2 and apolar pairings.

use crate::scalar::{double_factorial, factorial, multinomial, Coeff, Rat};
use crate::Error;
use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Bidegree data for the space of biforms of bidegree (2 k1, 2 k2) in
/// (x_1..x_n, y_1..y_m).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BidegreeShape {
    pub n: usize,
    pub m: usize,
    pub k1: usize,
    pub k2: usize,
}

impl BidegreeShape {
    pub fn new(n: usize, m: usize, k1: usize, k2: usize) -> Self {
        assert!(n >= 1 && m >= 1 && k1 >= 1 && k2 >= 1);
        BidegreeShape { n, m, k1, k2 }
    }

    pub fn x_degree(&self) -> u32 {
        2 * self.k1 as u32
    }

    pub fn y_degree(&self) -> u32 {
        2 * self.k2 as u32
    }

    /// Dimension of the full biform space.
    pub fn dim(&self) -> usize {
        count_monomials(self.n, self.x_degree()) * count_monomials(self.m, self.y_degree())
    }

    /// Dimension of the mean-zero hyperplane M.
    pub fn dim_m(&self) -> usize {
        self.dim() - 1
    }

    pub fn x_exponents(&self) -> Vec<Vec<u32>> {
        exponents_of_degree(self.n, self.x_degree())
    }

    pub fn y_exponents(&self) -> Vec<Vec<u32>> {
        exponents_of_degree(self.m, self.y_degree())
    }
}

pub fn count_monomials(nvars: usize, degree: u32) -> usize {
    // C(nvars + degree - 1, degree)
    crate::scalar::binomial((nvars as u64) + (degree as u64) - 1, degree as u64)
        .try_into()
        .expect("monomial count fits usize")
}

/// All exponent vectors of the given total degree, graded-lexicographic
/// (lexicographic descending within the fixed degree). This ordering is the
/// global canonical one; coefficient vectors and serialized forms rely on it.
pub fn exponents_of_degree(nvars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(count_monomials(nvars, degree));
    let mut cur = vec![0u32; nvars];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for v in (0..=left).rev() {
            cur[pos] = v;
            rec(out, cur, pos + 1, left - v);
        }
    }
    if nvars == 0 {
        return out;
    }
    rec(&mut out, &mut cur, 0, degree);
    out
}

/// Index lookup for the canonical monomial order of a shape.
pub struct MonoIndex {
    pub shape: BidegreeShape,
    pub xs: Vec<Vec<u32>>,
    pub ys: Vec<Vec<u32>>,
    x_of: HashMap<Vec<u32>, usize>,
    y_of: HashMap<Vec<u32>, usize>,
}

impl MonoIndex {
    pub fn new(shape: BidegreeShape) -> Self {
        let xs = shape.x_exponents();
        let ys = shape.y_exponents();
        let x_of = xs.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        let y_of = ys.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        MonoIndex { shape, xs, ys, x_of, y_of }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ax: &[u32], ay: &[u32]) -> Option<usize> {
        let ix = self.x_of.get(ax)?;
        let iy = self.y_of.get(ay)?;
        Some(ix * self.ys.len() + iy)
    }

    pub fn exponents(&self, idx: usize) -> (&[u32], &[u32]) {
        let ny = self.ys.len();
        (&self.xs[idx / ny], &self.ys[idx % ny])
    }
}

/// Dense biform with canonical monomial order. The scalar kind (exact
/// rational vs float) is part of the type.
#[derive(Clone, Debug, PartialEq)]
pub struct Biform<S: Coeff> {
    shape: BidegreeShape,
    coeffs: Vec<S>,
}

pub type BiformQ = Biform<Rat>;
pub type BiformF = Biform<f64>;

impl<S: Coeff> Biform<S> {
    pub fn zero(shape: BidegreeShape) -> Self {
        Biform { shape, coeffs: vec![S::zero(); shape.dim()] }
    }

    pub fn from_coeffs(shape: BidegreeShape, coeffs: Vec<S>) -> Self {
        assert_eq!(coeffs.len(), shape.dim());
        Biform { shape, coeffs }
    }

    pub fn shape(&self) -> BidegreeShape {
        self.shape
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    pub fn coeff_at(&self, idx: usize) -> &S {
        &self.coeffs[idx]
    }

    pub fn set_coeff(&mut self, idx: usize, v: S) {
        self.coeffs[idx] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, other: &Self) -> Result<Self, Error> {
        self.check_shape(other)?;
        Ok(Biform {
            shape: self.shape,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, Error> {
        self.check_shape(other)?;
        Ok(Biform {
            shape: self.shape,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a.clone() - b.clone())
                .collect(),
        })
    }

    pub fn scale(&self, s: &S) -> Self {
        Biform {
            shape: self.shape,
            coeffs: self.coeffs.iter().map(|c| c.clone() * s.clone()).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        Biform { shape: self.shape, coeffs: self.coeffs.iter().map(|c| -c.clone()).collect() }
    }

    pub fn to_float(&self) -> Biform<f64> {
        Biform { shape: self.shape, coeffs: self.coeffs.iter().map(|c| c.to_f64()).collect() }
    }

    pub fn eval(&self, x: &[S], y: &[S]) -> S {
        assert_eq!(x.len(), self.shape.n);
        assert_eq!(y.len(), self.shape.m);
        let idx = MonoIndex::new(self.shape);
        let mut acc = S::zero();
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (ax, ay) = idx.exponents(i);
            let mut term = c.clone();
            for (v, &e) in x.iter().zip(ax) {
                for _ in 0..e {
                    term = term * v.clone();
                }
            }
            for (v, &e) in y.iter().zip(ay) {
                for _ in 0..e {
                    term = term * v.clone();
                }
            }
            acc = acc + term;
        }
        acc
    }

    /// Multiplies by q^ell, q = (sum x_i^2)(sum y_j^2); the result lives at
    /// bidegree (2(k1+ell), 2(k2+ell)).
    pub fn times_q_power(&self, ell: usize) -> Biform<S> {
        if ell == 0 {
            return self.clone();
        }
        let out_shape = BidegreeShape::new(
            self.shape.n,
            self.shape.m,
            self.shape.k1 + ell,
            self.shape.k2 + ell,
        );
        let out_idx = MonoIndex::new(out_shape);
        let in_idx = MonoIndex::new(self.shape);
        let xp = exponents_of_degree(self.shape.n, ell as u32);
        let yp = exponents_of_degree(self.shape.m, ell as u32);
        let mut out: Biform<S> = Biform::zero(out_shape);
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (ax, ay) = in_idx.exponents(i);
            for a in &xp {
                let ca = S::from_rat(&Rat::from_integer(multinomial(a)));
                for b in &yp {
                    let cb = S::from_rat(&Rat::from_integer(multinomial(b)));
                    let nx: Vec<u32> = ax.iter().zip(a).map(|(&e, &f)| e + 2 * f).collect();
                    let ny: Vec<u32> = ay.iter().zip(b).map(|(&e, &f)| e + 2 * f).collect();
                    let j = out_idx.index(&nx, &ny).expect("product exponent in range");
                    let add = c.clone() * ca.clone() * cb;
                    out.coeffs[j] = out.coeffs[j].clone() + add;
                }
            }
        }
        out
    }

    fn check_shape(&self, other: &Self) -> Result<(), Error> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape, other.shape));
        }
        Ok(())
    }

    /// Coefficient-wise max abs value (as f64).
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.to_f64().abs()).fold(0.0, f64::max)
    }

    /// Builder: adds `c` to the coefficient of x^ax y^ay.
    pub fn add_term(&mut self, ax: &[u32], ay: &[u32], c: S) {
        let idx = MonoIndex::new(self.shape);
        let i = idx.index(ax, ay).expect("exponents match shape");
        self.coeffs[i] = self.coeffs[i].clone() + c;
    }
}

/// q = (sum_i x_i^2)^{k1} (sum_j y_j^2)^{k2}, identically 1 on T.
pub fn q_biform<S: Coeff>(shape: BidegreeShape) -> Biform<S> {
    let mut out = Biform::zero(shape);
    let idx = MonoIndex::new(shape);
    let xp = exponents_of_degree(shape.n, shape.k1 as u32);
    let yp = exponents_of_degree(shape.m, shape.k2 as u32);
    for a in &xp {
        let ca = Rat::from_integer(multinomial(a));
        for b in &yp {
            let cb = Rat::from_integer(multinomial(b));
            let nx: Vec<u32> = a.iter().map(|&e| 2 * e).collect();
            let ny: Vec<u32> = b.iter().map(|&e| 2 * e).collect();
            let i = idx.index(&nx, &ny).unwrap();
            out.coeffs[i] = S::from_rat(&(&ca * &cb));
        }
    }
    out
}

/// Exact moment of the monomial x^alpha over the unit sphere S^{n-1} with
/// normalized surface measure: prod_i (alpha_i - 1)!! / (n (n+2) ... (n+|a|-2))
/// when all entries are even, 0 otherwise.
pub fn sphere_moment(alpha: &[u32], n: usize) -> Rat {
    assert_eq!(alpha.len(), n, "multi-index length must equal the dimension");
    if alpha.iter().any(|&a| a % 2 == 1) {
        return Rat::zero();
    }
    let total: u32 = alpha.iter().sum();
    if total == 0 {
        return Rat::one();
    }
    let mut num = BigInt::one();
    for &a in alpha {
        num *= double_factorial(a.saturating_sub(1) as u64);
    }
    let mut den = BigInt::one();
    let mut t = 0u32;
    while t < total {
        den *= BigInt::from(n as u64 + t as u64);
        t += 2;
    }
    Rat::new(num, den)
}

/// Memoized sphere moments in a fixed dimension.
pub struct MomentTable {
    pub n: usize,
    cache: HashMap<Vec<u32>, Rat>,
}

impl MomentTable {
    pub fn new(n: usize) -> Self {
        MomentTable { n, cache: HashMap::new() }
    }

    pub fn value(&mut self, alpha: &[u32]) -> Rat {
        if let Some(v) = self.cache.get(alpha) {
            return v.clone();
        }
        let v = sphere_moment(alpha, self.n);
        self.cache.insert(alpha.to_vec(), v.clone());
        v
    }
}

fn add_exponents(a: &[u32], b: &[u32]) -> Vec<u32> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// L^2(T) inner product <f, g> = int_T f g d(sigma).
pub fn l2_inner<S: Coeff>(f: &Biform<S>, g: &Biform<S>) -> Result<S, Error> {
    if f.shape != g.shape {
        return Err(Error::ShapeMismatch(f.shape, g.shape));
    }
    let idx = MonoIndex::new(f.shape);
    let mut mx = MomentTable::new(f.shape.n);
    let mut my = MomentTable::new(f.shape.m);
    let mut acc = S::zero();
    for (i, ci) in f.coeffs.iter().enumerate() {
        if ci.is_zero() {
            continue;
        }
        let (axi, ayi) = idx.exponents(i);
        let (axi, ayi) = (axi.to_vec(), ayi.to_vec());
        for (j, cj) in g.coeffs.iter().enumerate() {
            if cj.is_zero() {
                continue;
            }
            let (axj, ayj) = idx.exponents(j);
            let ex = add_exponents(&axi, axj);
            if ex.iter().any(|&e| e % 2 == 1) {
                continue;
            }
            let ey = add_exponents(&ayi, ayj);
            if ey.iter().any(|&e| e % 2 == 1) {
                continue;
            }
            let w = &mx.value(&ex) * &my.value(&ey);
            acc = acc + ci.clone() * cj.clone() * S::from_rat(&w);
        }
    }
    Ok(acc)
}

/// Apolar (differential) inner product: sum over shared monomials of
/// c_ab d_ab a! b!.
pub fn apolar_inner<S: Coeff>(f: &Biform<S>, g: &Biform<S>) -> Result<S, Error> {
    if f.shape != g.shape {
        return Err(Error::ShapeMismatch(f.shape, g.shape));
    }
    let idx = MonoIndex::new(f.shape);
    let mut acc = S::zero();
    for (i, ci) in f.coeffs.iter().enumerate() {
        if ci.is_zero() || g.coeffs[i].is_zero() {
            continue;
        }
        let (ax, ay) = idx.exponents(i);
        let mut fact = BigInt::one();
        for &e in ax.iter().chain(ay.iter()) {
            fact *= factorial(e as u64);
        }
        acc = acc + ci.clone() * g.coeffs[i].clone() * S::from_rat(&Rat::from_integer(fact));
    }
    Ok(acc)
}

/// The averaging operator T, monomial-wise:
/// T(x^a y^b) = sum_{a', b'} multinom(2k1, a') multinom(2k2, b')
///              moment(a + a') moment(b + b') x^{a'} y^{b'}.
/// Defined on exact biforms only; the signature enforces the exactness
/// contract the identities below rely on.
pub fn apply_t(f: &BiformQ) -> BiformQ {
    let shape = f.shape;
    let idx = MonoIndex::new(shape);
    let mut mx = MomentTable::new(shape.n);
    let mut my = MomentTable::new(shape.m);
    let xs = &idx.xs;
    let ys = &idx.ys;
    let wx: Vec<Rat> = xs.iter().map(|a| Rat::from_integer(multinomial(a))).collect();
    let wy: Vec<Rat> = ys.iter().map(|b| Rat::from_integer(multinomial(b))).collect();
    let mut out = Biform::zero(shape);
    for (i, c) in f.coeffs.iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        let (ax, ay) = idx.exponents(i);
        let (ax, ay) = (ax.to_vec(), ay.to_vec());
        let mxs: Vec<Rat> = xs.iter().map(|a2| mx.value(&add_exponents(&ax, a2))).collect();
        let mys: Vec<Rat> = ys.iter().map(|b2| my.value(&add_exponents(&ay, b2))).collect();
        for (ia, a2w) in wx.iter().enumerate() {
            if mxs[ia].is_zero() {
                continue;
            }
            let fx = a2w * &mxs[ia];
            for (ib, b2w) in wy.iter().enumerate() {
                if mys[ib].is_zero() {
                    continue;
                }
                let add = c * &(&fx * &(b2w * &mys[ib]));
                let t = ia * ys.len() + ib;
                out.coeffs[t] += add;
            }
        }
    }
    out
}

/// Rational eigenvalue of q under T: T(q) = c q with
/// c = prod over the two groups of (2k-1)!! / ((n)(n+2)...(n+2k-2)),
/// which is the fully reduced form of the half-integer Gamma ratio (the pi
/// powers cancel exactly).
pub fn t_eigenvalue_on_q(shape: BidegreeShape) -> Rat {
    fn factor(k: usize, n: usize) -> Rat {
        let num = double_factorial(2 * k as u64 - 1);
        let mut den = BigInt::one();
        for t in 0..k {
            den *= BigInt::from((n + 2 * t) as u64);
        }
        Rat::new(num, den)
    }
    &factor(shape.k1, shape.n) * &factor(shape.k2, shape.m)
}

/// Mean of f over T, i.e. <f, q>. f lies in M iff this vanishes and in the
/// average-1 hyperplane H iff this equals one.
pub fn mean_on_torus<S: Coeff>(f: &Biform<S>) -> S {
    let idx = MonoIndex::new(f.shape);
    let mut mx = MomentTable::new(f.shape.n);
    let mut my = MomentTable::new(f.shape.m);
    let mut acc = S::zero();
    for (i, c) in f.coeffs.iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        let (ax, ay) = idx.exponents(i);
        let w = &mx.value(ax) * &my.value(ay);
        if !w.is_zero() {
            acc = acc + c.clone() * S::from_rat(&w);
        }
    }
    acc
}

/// Projection onto the mean-zero hyperplane M along q.
pub fn project_to_m<S: Coeff>(f: &Biform<S>) -> Biform<S> {
    let mean = mean_on_torus(f);
    if mean.is_zero() {
        return f.clone();
    }
    let q: Biform<S> = q_biform(f.shape);
    f.sub(&q.scale(&mean)).expect("same shape")
}

/// Deterministic L^2-orthonormal basis of M (float kind). Built by projecting
/// the canonical monomials onto M and running modified Gram-Schmidt under the
/// exact moment Gram matrix evaluated in floats.
pub fn orthonormal_basis_m(shape: BidegreeShape) -> Vec<BiformF> {
    let dim = shape.dim();
    let target = shape.dim_m();
    let gram = l2_gram_float(shape);
    let qv: Biform<f64> = q_biform(shape);
    let qn: f64 = gram_dot(&gram, qv.coeffs(), qv.coeffs());
    let mut collected: Vec<Vec<f64>> = Vec::with_capacity(target);
    for k in 0..dim {
        if collected.len() == target {
            break;
        }
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        // Project onto M: v -= (<v, q>/<q, q>) q.
        let s = gram_dot(&gram, &v, qv.coeffs()) / qn;
        for (vi, qi) in v.iter_mut().zip(qv.coeffs()) {
            *vi -= s * qi;
        }
        // Modified Gram-Schmidt, two passes for numerical safety.
        for _ in 0..2 {
            for u in &collected {
                let c = gram_dot(&gram, &v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
        }
        let norm = gram_dot(&gram, &v, &v).max(0.0).sqrt();
        if norm > 1e-8 {
            for vi in &mut v {
                *vi /= norm;
            }
            collected.push(v);
        }
    }
    assert_eq!(collected.len(), target, "orthonormal basis must span M");
    collected.into_iter().map(|v| Biform::from_coeffs(shape, v)).collect()
}

/// Float Gram matrix of the canonical monomials under the L^2(T) product.
pub fn l2_gram_float(shape: BidegreeShape) -> nalgebra::DMatrix<f64> {
    let idx = MonoIndex::new(shape);
    let dim = idx.len();
    let mut mx = MomentTable::new(shape.n);
    let mut my = MomentTable::new(shape.m);
    let mut g = nalgebra::DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (axi, ayi) = idx.exponents(i);
        let (axi, ayi) = (axi.to_vec(), ayi.to_vec());
        for j in i..dim {
            let (axj, ayj) = idx.exponents(j);
            let ex = add_exponents(&axi, axj);
            let ey = add_exponents(&ayi, ayj);
            let v = if ex.iter().any(|&e| e % 2 == 1) || ey.iter().any(|&e| e % 2 == 1) {
                0.0
            } else {
                crate::scalar::rat_to_f64(&(&mx.value(&ex) * &my.value(&ey)))
            };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn gram_dot(gram: &nalgebra::DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, bj) in b.iter().enumerate() {
            if *bj != 0.0 {
                row += gram[(i, j)] * bj;
            }
        }
        acc += ai * row;
    }
    acc
}

// ---------------------------------------------------------------------------
// Serialization: {shape, kind, terms: [{ax, ay, c}]}.

#[derive(Serialize, Deserialize)]
struct TermRepr {
    ax: Vec<u32>,
    ay: Vec<u32>,
    c: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct BiformRepr {
    shape: BidegreeShape,
    kind: String,
    terms: Vec<TermRepr>,
}

impl<S: Coeff> Serialize for Biform<S> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        let idx = MonoIndex::new(self.shape);
        let terms = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| {
                let (ax, ay) = idx.exponents(i);
                TermRepr { ax: ax.to_vec(), ay: ay.to_vec(), c: c.to_json() }
            })
            .collect();
        BiformRepr { shape: self.shape, kind: S::KIND.to_string(), terms }.serialize(s)
    }
}

impl<'de, S: Coeff> Deserialize<'de> for Biform<S> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = BiformRepr::deserialize(d)?;
        if repr.kind != S::KIND {
            return Err(D::Error::custom(format!(
                "biform kind mismatch: expected {:?}, found {:?}",
                S::KIND,
                repr.kind
            )));
        }
        let mut out = Biform::zero(repr.shape);
        let idx = MonoIndex::new(repr.shape);
        for t in repr.terms {
            let i = idx
                .index(&t.ax, &t.ay)
                .ok_or_else(|| D::Error::custom("term exponents do not match shape"))?;
            let c = S::from_json(&t.c).ok_or_else(|| D::Error::custom("bad coefficient"))?;
            out.coeffs[i] = c;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, rat_int};
    use rand::{Rng, SeedableRng};

    fn shape33() -> BidegreeShape {
        BidegreeShape::new(3, 3, 1, 1)
    }

    #[test]
    fn dimensions() {
        assert_eq!(shape33().dim(), 36);
        assert_eq!(shape33().dim_m(), 35);
        assert_eq!(BidegreeShape::new(2, 2, 1, 1).dim_m(), 8);
        assert_eq!(BidegreeShape::new(2, 3, 2, 1).dim(), 5 * 6);
    }

    #[test]
    fn moments_match_closed_form() {
        assert_eq!(sphere_moment(&[2, 0, 0], 3), rat(1, 3));
        assert_eq!(sphere_moment(&[1, 1, 0], 3), rat(0, 1));
        assert_eq!(sphere_moment(&[2, 2, 0], 3), rat(1, 15));
        assert_eq!(sphere_moment(&[0, 0, 0], 3), rat(1, 1));
        assert_eq!(sphere_moment(&[4, 0, 0], 3), rat(1, 5));
        // Trace identity: sum_i moment(2 e_i) = 1.
        for n in 1..6 {
            let mut acc = Rat::zero();
            for i in 0..n {
                let mut a = vec![0u32; n];
                a[i] = 2;
                acc += sphere_moment(&a, n);
            }
            assert_eq!(acc, Rat::one());
        }
    }

    #[test]
    fn moment_normalization_of_norm_power() {
        // Expanding (sum x_i^2)^k monomial-wise and integrating gives exactly 1.
        for (n, k) in [(3usize, 1u32), (3, 2), (4, 3), (2, 2)] {
            let parts = exponents_of_degree(n, k);
            let mut acc = Rat::zero();
            for a in &parts {
                let c = Rat::from_integer(multinomial(a));
                let doubled: Vec<u32> = a.iter().map(|&e| 2 * e).collect();
                acc += &c * &sphere_moment(&doubled, n);
            }
            assert_eq!(acc, Rat::one());
        }
    }

    #[test]
    fn l2_inner_examples() {
        let shape = shape33();
        let q: BiformQ = q_biform(shape);
        assert_eq!(l2_inner(&q, &q).unwrap(), Rat::one());

        let mut f = BiformQ::zero(shape);
        f.add_term(&[2, 0, 0], &[2, 0, 0], Rat::one());
        assert_eq!(l2_inner(&f, &q).unwrap(), rat(1, 9));

        let mut g = BiformQ::zero(shape);
        g.add_term(&[1, 1, 0], &[1, 1, 0], Rat::one());
        assert_eq!(l2_inner(&g, &q).unwrap(), Rat::zero());

        let bad = BiformQ::zero(BidegreeShape::new(2, 2, 1, 1));
        assert!(l2_inner(&q, &bad).is_err());

        // Positive definiteness on random nonzero exact biforms.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut f = BiformQ::zero(shape);
            for i in 0..shape.dim() {
                f.set_coeff(i, rat_int(rng.gen_range(-3..=3)));
            }
            if f.is_zero() {
                continue;
            }
            assert!(l2_inner(&f, &f).unwrap() > Rat::zero());
        }
    }

    #[test]
    fn apolar_examples_and_differential_oracle() {
        let shape = shape33();
        let mut f = BiformQ::zero(shape);
        f.add_term(&[2, 0, 0], &[2, 0, 0], Rat::one());
        assert_eq!(apolar_inner(&f, &f).unwrap(), rat_int(4));

        let mut g = BiformQ::zero(shape);
        g.add_term(&[1, 1, 0], &[1, 1, 0], Rat::one());
        assert_eq!(apolar_inner(&g, &g).unwrap(), rat_int(1));
        assert_eq!(apolar_inner(&f, &g).unwrap(), Rat::zero());

        // Oracle: the differential operator of a monomial applied to a
        // monomial leaves the constant ax! ay! exactly on the diagonal.
        let idx = MonoIndex::new(shape);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        for _ in 0..5 {
            let mut a = BiformQ::zero(shape);
            let mut b = BiformQ::zero(shape);
            for i in 0..shape.dim() {
                a.set_coeff(i, rat_int(rng.gen_range(-2..=2)));
                b.set_coeff(i, rat_int(rng.gen_range(-2..=2)));
            }
            let mut oracle = Rat::zero();
            for (i, ca) in a.coeffs().iter().enumerate() {
                let (ax, ay) = idx.exponents(i);
                let mut fact = BigInt::one();
                for &e in ax.iter().chain(ay.iter()) {
                    fact *= factorial(e as u64);
                }
                oracle += ca * &b.coeffs()[i] * Rat::from_integer(fact);
            }
            assert_eq!(apolar_inner(&a, &b).unwrap(), oracle);
        }
    }

    #[test]
    fn operator_t_eigenvector_and_monomial_image() {
        let shape = shape33();
        let q: BiformQ = q_biform(shape);
        let tq = apply_t(&q);
        assert_eq!(tq, q.scale(&rat(1, 9)));
        assert_eq!(t_eigenvalue_on_q(shape), rat(1, 9));

        // T(x1^2 y1^2) = (1/225)(2 x1^2 + sum x_i^2)(2 y1^2 + sum y_j^2).
        let mut f = BiformQ::zero(shape);
        f.add_term(&[2, 0, 0], &[2, 0, 0], Rat::one());
        let tf = apply_t(&f);
        let mut expect = BiformQ::zero(shape);
        for (i, xi) in [[2u32, 0, 0], [0, 2, 0], [0, 0, 2]].iter().enumerate() {
            for (j, yj) in [[2u32, 0, 0], [0, 2, 0], [0, 0, 2]].iter().enumerate() {
                let cx = if i == 0 { rat_int(3) } else { rat_int(1) };
                let cy = if j == 0 { rat_int(3) } else { rat_int(1) };
                expect.add_term(xi, yj, &cx * &cy * rat(1, 225));
            }
        }
        assert_eq!(tf, expect);

        // Gamma-ratio eigenvalue, non-biquadratic shape.
        let s = BidegreeShape::new(2, 3, 2, 1);
        // x-part: (2*2-1)!!/(n(n+2)) = 3/8; y-part: 1/3.
        assert_eq!(t_eigenvalue_on_q(s), rat(3, 24));
        let q2: BiformQ = q_biform(s);
        assert_eq!(apply_t(&q2), q2.scale(&rat(1, 8)));
    }

    #[test]
    fn t_pairing_identity_exact() {
        // <Tf, g>_d = (2k1)! (2k2)! <f, g> exactly on random rational pairs.
        let shapes = [
            BidegreeShape::new(3, 3, 1, 1),
            BidegreeShape::new(3, 4, 1, 1),
            BidegreeShape::new(2, 3, 2, 1),
        ];
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        for shape in shapes {
            let factor = Rat::from_integer(
                factorial(2 * shape.k1 as u64) * factorial(2 * shape.k2 as u64),
            );
            for _ in 0..6 {
                let mut f = BiformQ::zero(shape);
                let mut g = BiformQ::zero(shape);
                for i in 0..shape.dim() {
                    f.set_coeff(i, rat(rng.gen_range(-6..=6), rng.gen_range(1..=3)));
                    g.set_coeff(i, rat(rng.gen_range(-6..=6), rng.gen_range(1..=3)));
                }
                let lhs = apolar_inner(&apply_t(&f), &g).unwrap();
                let rhs = &factor * &l2_inner(&f, &g).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn mean_and_projection() {
        let shape = shape33();
        let q: BiformQ = q_biform(shape);
        assert_eq!(mean_on_torus(&q), Rat::one());

        let mut f = BiformQ::zero(shape);
        f.add_term(&[2, 0, 0], &[2, 0, 0], Rat::one());
        f.add_term(&[0, 2, 0], &[0, 2, 0], -Rat::one());
        assert_eq!(mean_on_torus(&f), Rat::zero());
        assert_eq!(project_to_m(&f), f);

        let mut g = BiformQ::zero(shape);
        g.add_term(&[2, 0, 0], &[2, 0, 0], Rat::one());
        let pg = project_to_m(&g);
        assert_eq!(pg, g.sub(&q.scale(&rat(1, 9))).unwrap());
        assert_eq!(mean_on_torus(&pg), Rat::zero());
        assert_eq!(project_to_m(&q), BiformQ::zero(shape));
    }

    #[test]
    fn orthonormal_basis_sizes_and_gram() {
        for shape in [BidegreeShape::new(2, 2, 1, 1), shape33()] {
            let basis = orthonormal_basis_m(shape);
            assert_eq!(basis.len(), shape.dim_m());
            for (i, a) in basis.iter().enumerate() {
                assert!(mean_on_torus(a).abs() < 1e-10);
                for (j, b) in basis.iter().enumerate() {
                    let v: f64 = l2_inner(a, b).unwrap();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((v - target).abs() < 1e-10, "gram[{i},{j}] = {v}");
                }
            }
        }
    }

    #[test]
    fn q_power_multiplication() {
        let shape = shape33();
        let q: BiformQ = q_biform(shape);
        let q2 = q.times_q_power(1);
        let expect: BiformQ = q_biform(BidegreeShape::new(3, 3, 2, 2));
        assert_eq!(q2, expect);
    }

    #[test]
    fn serialization_round_trip() {
        let shape = shape33();
        let mut f = BiformQ::zero(shape);
        f.add_term(&[2, 0, 0], &[1, 1, 0], rat(-7, 3));
        f.add_term(&[1, 0, 1], &[0, 2, 0], rat_int(5));
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"exact\""));
        assert!(s.contains("-7/3"));
        let back: BiformQ = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let bad: Result<BiformF, _> = serde_json::from_str(&s);
        assert!(bad.is_err());
    }
}
