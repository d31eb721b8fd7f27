//! Matrix-lifted rank-constrained LMI formulation and an alternating
//! projection solver for it.
//!
//! With factors
//!
//! ```text
//! G₁ = [I; Ā; Āᵀ; B̄ᵀ; C̄; Z; P]      (heights 2n, 2n, 2n, 2m, m, 2n, 2n)
//! G₂ = [I; B̄; B̄ 𝕁ₘ]                  (heights 2m, 2n, 2n)
//! ```
//!
//! the lifted variables are `𝐆ⱼ = Gⱼ Gⱼᵀ`. Polynomial constraints in the
//! original variables become linear constraints on blocks of `𝐆ⱼ`, plus
//! `𝐆ⱼ ⪰ 0` and `rank 𝐆₁ ≤ 2n`, `rank 𝐆₂ ≤ 2m`.
//!
//! Symmetric matrices are stored in scaled half-vectorized form (off-diagonal
//! entries times √2), so Euclidean projections there are Frobenius projections
//! in matrix space.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::reduced::{complete, Completion};
use super::{loss, ProjectionTarget};
use crate::error::{Error, Result};
use crate::numerics::{
    normalized_det, project_psd, project_psd_rank, solve_lyapunov, spectral_abscissa, symmetrize, symplectic, vstack, Mat, DET_Z_MIN,
};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Block labels of `G₁`, in factor order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block1 {
    I,
    A,
    At,
    Bt,
    C,
    Z,
    P,
}

/// Block labels of `G₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block2 {
    I,
    B,
    BJ,
}

/// Sparse linear functional on the stacked scaled half-vectorization.
type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub target: ProjectionTarget,
    offsets1: [usize; 8],
    offsets2: [usize; 4],
    /// The solver works on `Hⱼ = Mⱼ 𝐆ⱼ Mⱼᵀ`: factor rows re-centred at the
    /// target and block-scaled. Congruence keeps PSD-ness and rank.
    m1: Mat,
    m1_inv: Mat,
    m2: Mat,
    m2_inv: Mat,
    block_scales1: [f64; 7],
    eq_rows: Vec<Row>,
    eq_rhs: Vec<f64>,
    eq_gram_pinv: Mat,
    loss_row: Vec<f64>,
    loss_const: f64,
    /// Loss functional reduced modulo the equality constraints: equal to the
    /// loss on the affine set, and orthogonal to it.
    loss_row_red: Vec<f64>,
    loss_const_red: f64,
}

fn offsets<const K: usize>(widths: &[usize]) -> [usize; K] {
    let mut out = [0; K];
    for k in 0..widths.len() {
        out[k + 1] = out[k] + widths[k];
    }
    out
}

fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry `(i, j)` (either order) in the half-vectorization, and
/// the factor turning the stored value back into the matrix entry.
fn svec_index(d: usize, i: usize, j: usize) -> (usize, f64) {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    // Row-major upper triangle.
    let idx = r * d - r * (r + 1) / 2 + c;
    (idx, if r == c { 1.0 } else { 1.0 / SQRT2 })
}

fn svec_into(m: &Mat, out: &mut [f64]) {
    let d = m.nrows();
    for i in 0..d {
        for j in i..d {
            let (k, w) = svec_index(d, i, j);
            out[k] = if i == j { m[(i, j)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) / w };
        }
    }
}

fn smat(v: &[f64], d: usize) -> Mat {
    let mut m = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let (k, w) = svec_index(d, i, j);
            m[(i, j)] = v[k] * w;
            m[(j, i)] = v[k] * w;
        }
    }
    m
}

/// A point of the lifted space: the pair `(𝐆₁, 𝐆₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    pub g1: Mat,
    pub g2: Mat,
}

/// Original variables read from (or used to build) a lifted point.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVars {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub z: Mat,
    pub p: Mat,
}

impl LiftedProblem {
    pub fn dim1(&self) -> usize {
        10 * self.n + 3 * self.m
    }

    pub fn dim2(&self) -> usize {
        4 * self.n + 2 * self.m
    }

    /// Row range of a `G₁` block.
    pub fn block1(&self, b: Block1) -> std::ops::Range<usize> {
        let k = b as usize;
        self.offsets1[k]..self.offsets1[k + 1]
    }

    pub fn block2(&self, b: Block2) -> std::ops::Range<usize> {
        let k = b as usize;
        self.offsets2[k]..self.offsets2[k + 1]
    }

    fn len(&self) -> usize {
        svec_len(self.dim1()) + svec_len(self.dim2())
    }

    fn gvec(&self, x: &LiftedPoint) -> Vec<f64> {
        self.hvec(&x.g1, &x.g2)
    }

    fn hvec(&self, h1: &Mat, h2: &Mat) -> Vec<f64> {
        let s1 = svec_len(self.dim1());
        let mut v = vec![0.0; self.len()];
        svec_into(h1, &mut v[..s1]);
        svec_into(h2, &mut v[s1..]);
        v
    }

    fn hmat(&self, v: &[f64]) -> (Mat, Mat) {
        let s1 = svec_len(self.dim1());
        (smat(&v[..s1], self.dim1()), smat(&v[s1..], self.dim2()))
    }

    fn to_vec(&self, x: &LiftedPoint) -> Vec<f64> {
        self.hvec(&(&self.m1 * &x.g1 * self.m1.transpose()), &(&self.m2 * &x.g2 * self.m2.transpose()))
    }

    fn from_vec(&self, v: &[f64]) -> LiftedPoint {
        let (h1, h2) = self.hmat(v);
        LiftedPoint {
            g1: symmetrize(&(&self.m1_inv * h1 * self.m1_inv.transpose())),
            g2: symmetrize(&(&self.m2_inv * h2 * self.m2_inv.transpose())),
        }
    }

    /// Pull a functional on `(𝐆₁, 𝐆₂)` (stacked half-vectorized) back to the
    /// solver coordinates.
    fn pull_back(&self, g_row: &[f64]) -> Vec<f64> {
        let s1 = svec_len(self.dim1());
        let w1 = smat(&g_row[..s1], self.dim1());
        let w2 = smat(&g_row[s1..], self.dim2());
        self.hvec(
            &(self.m1_inv.transpose() * w1 * &self.m1_inv),
            &(self.m2_inv.transpose() * w2 * &self.m2_inv),
        )
    }

    fn block_scale1(&self, b: Block1) -> f64 {
        self.block_scales1[b as usize]
    }

    /// Lifted point `Gⱼ Gⱼᵀ` built from original variables.
    pub fn lift(&self, v: &LiftedVars) -> LiftedPoint {
        let n2 = 2 * self.n;
        let id = Mat::identity(n2, n2);
        let f1 = vstack(&[&id, &v.a, &v.a.transpose(), &v.b.transpose(), &v.c, &v.z, &v.p]);
        let jm = symplectic(self.m);
        let f2 = vstack(&[&Mat::identity(2 * self.m, 2 * self.m), &v.b, &(&v.b * &jm)]);
        LiftedPoint { g1: &f1 * f1.transpose(), g2: &f2 * f2.transpose() }
    }

    /// Read `(Ā, B̄, C̄, Z, P)` from a rank-`2n` factor of `𝐆₁`, normalized so
    /// that its leading block is the identity.
    pub fn recover(&self, x: &LiftedPoint) -> Option<LiftedVars> {
        let n2 = 2 * self.n;
        let eig = SymmetricEigen::new(symmetrize(&x.g1));
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let mut f = Mat::zeros(self.dim1(), n2);
        for (col, &k) in order.iter().take(n2).enumerate() {
            let lam = eig.eigenvalues[k].max(0.0).sqrt();
            f.set_column(col, &(eig.eigenvectors.column(k) * lam));
        }
        let f1 = f.rows(0, n2).into_owned();
        let inv = f1.try_inverse()?;
        let g = f * inv;
        let block = |b: Block1| g.rows(self.block1(b).start, self.block1(b).len()).into_owned();
        let vars = LiftedVars {
            a: block(Block1::A),
            b: block(Block1::Bt).transpose(),
            c: block(Block1::C),
            z: block(Block1::Z),
            p: block(Block1::P),
        };
        if vars.a.iter().chain(vars.b.iter()).all(|v| v.is_finite()) {
            Some(vars)
        } else {
            None
        }
    }

    /// Lifted loss `½(tr 𝐆₁(2,2) + tr 𝐆₁(4,4) + tr 𝐆₁(5,5)) − ⟨Â, 𝐆₁(2,1)⟩ − … + const`.
    pub fn lifted_loss(&self, x: &LiftedPoint) -> f64 {
        let v = self.gvec(x);
        self.loss_row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + self.loss_const
    }

    /// Largest violation over all convex constraints, relative to the size of
    /// the point.
    pub fn constraint_residual(&self, x: &LiftedPoint) -> f64 {
        let v = self.to_vec(x);
        let g = self.gvec(x);
        let scale = 1.0 + x.g1.norm() + x.g2.norm();
        let eq = self
            .eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .map(|(row, b)| (row.iter().map(|(k, c)| c * v[*k]).sum::<f64>() - b).abs())
            .fold(0.0, f64::max);
        let lossv = (self.loss_row.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + self.loss_const - self.gamma).max(0.0);
        let (m1, m2) = self.lmi_maps(x);
        let neg = |m: &Mat| -> f64 { (-m.clone().symmetric_eigenvalues().min()).max(0.0) };
        let psd1 = neg(&x.g1);
        let psd2 = neg(&x.g2);
        [eq, lossv, neg(&m1), neg(&m2), psd1, psd2].into_iter().fold(0.0, f64::max) / scale
    }

    /// `(sym 𝐆₁(1,7) − εI, −(𝐆₁(3,7) + 𝐆₁(7,3)) − ε sym 𝐆₁(1,7))`.
    fn lmi_maps(&self, x: &LiftedPoint) -> (Mat, Mat) {
        let n2 = 2 * self.n;
        let r1 = self.block1(Block1::I).start;
        let r3 = self.block1(Block1::At).start;
        let r7 = self.block1(Block1::P).start;
        let y = x.g1.view((r1, r7), (n2, n2)).into_owned();
        let w = x.g1.view((r3, r7), (n2, n2)).into_owned();
        let sy = symmetrize(&y);
        let m1 = &sy - Mat::identity(n2, n2) * self.epsilon;
        let m2 = -(&w + w.transpose()) - sy * self.epsilon;
        (m1, m2)
    }
}

/// Encode the lifted feasibility problem for `target` at loss bound `gamma`.
pub fn build_lifted(target: &ProjectionTarget, gamma: f64, epsilon: f64) -> Result<LiftedProblem> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter("gamma must be non-negative".into()));
    }
    target.check()?;
    crate::numerics::require_hurwitz(&target.a)?;
    let n = target.a.nrows() / 2;
    let m = target.b.ncols() / 2;
    let (n2, m2) = (2 * n, 2 * m);
    let offsets1: [usize; 8] = offsets(&[n2, n2, n2, m2, m, n2, n2]);
    let offsets2: [usize; 4] = offsets(&[m2, n2, n2]);
    let mut prob = LiftedProblem {
        n,
        m,
        epsilon,
        gamma,
        target: target.clone(),
        offsets1,
        offsets2,
        m1: Mat::identity(0, 0),
        m1_inv: Mat::identity(0, 0),
        m2: Mat::identity(0, 0),
        m2_inv: Mat::identity(0, 0),
        block_scales1: [1.0; 7],
        eq_rows: Vec::new(),
        eq_rhs: Vec::new(),
        eq_gram_pinv: Mat::zeros(0, 0),
        loss_row: Vec::new(),
        loss_const: 0.0,
        loss_row_red: Vec::new(),
        loss_const_red: 0.0,
    };

    // Factor rows of Ā, B̄ᵀ, C̄ (and B̄, B̄𝕁 in G₂) are measured from the
    // target; the unshifted Āᵀ and P rows are scaled to the size of the
    // identity block.
    let unit = |x: &Mat| {
        let nrm = x.norm();
        if nrm > 0.0 && nrm.is_finite() { (n2 as f64).sqrt() / nrm } else { 1.0 }
    };
    let p0 = init_certificate(&target.a)?;
    prob.block_scales1 = [1.0, 1.0, unit(&target.a), 1.0, 1.0, 1.0, unit(&p0)];
    let (d1, d2) = (prob.dim1(), prob.dim2());
    let mut t1 = Mat::identity(d1, d1);
    let bt = target.b.transpose();
    for (blk, x) in [(Block1::A, &target.a), (Block1::Bt, &bt), (Block1::C, &target.c)] {
        t1.view_mut((offsets1[blk as usize], 0), (x.nrows(), n2)).copy_from(&(-x));
    }
    let mut s1 = Mat::identity(d1, d1);
    for k in 0..7 {
        for r in offsets1[k]..offsets1[k + 1] {
            s1[(r, r)] = prob.block_scales1[k];
        }
    }
    let mut t2 = Mat::identity(d2, d2);
    let bjm = &target.b * symplectic(m);
    t2.view_mut((offsets2[Block2::B as usize], 0), (n2, m2)).copy_from(&(-&target.b));
    t2.view_mut((offsets2[Block2::BJ as usize], 0), (n2, m2)).copy_from(&(-bjm));
    prob.m1 = &s1 * &t1;
    prob.m1_inv = prob.m1.clone().try_inverse().ok_or(Error::SingularV)?;
    prob.m2 = t2;
    prob.m2_inv = prob.m2.clone().try_inverse().ok_or(Error::SingularV)?;

    let b1 = |b: Block1| offsets1[b as usize];
    let b2 = |b: Block2| offsets2[b as usize];
    let jm = symplectic(m);
    let jdt = &jm * target.d_meas.transpose();

    let mut rows: Vec<Row> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut push = |terms: Vec<(usize, f64)>, b: f64| {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (k, c) in terms {
            if c == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(kk, _)| *kk == k) {
                Some(e) => e.1 += c,
                None => merged.push((k, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        if !merged.is_empty() {
            rows.push(merged);
            rhs.push(b);
        }
    };
    // Coefficients on the half-vectorized (𝐆₁, 𝐆₂).
    let e1 = |i: usize, j: usize, c: f64| {
        let (k, w) = svec_index(d1, i, j);
        (k, c * w)
    };
    let e2 = |i: usize, j: usize, c: f64| {
        let (k, w) = svec_index(d2, i, j);
        (svec_len(d1) + k, c * w)
    };

    let (i1, a1, at1, bt1, c1, z1, p1) =
        (b1(Block1::I), b1(Block1::A), b1(Block1::At), b1(Block1::Bt), b1(Block1::C), b1(Block1::Z), b1(Block1::P));
    let (i2, bb2, bj2) = (b2(Block2::I), b2(Block2::B), b2(Block2::BJ));

    for a in 0..n2 {
        for b in 0..n2 {
            // P symmetric.
            if a < b {
                push(vec![e1(i1 + a, p1 + b, 1.0), e1(p1 + a, i1 + b, -1.0)], 0.0);
            }
            // A Z + Z Aᵀ + B 𝕁 Bᵀ = 0.
            push(
                vec![e1(a1 + a, z1 + b, -1.0), e1(z1 + a, a1 + b, 1.0), e2(bj2 + a, bb2 + b, 1.0)],
                0.0,
            );
            // Z skew.
            if a <= b {
                push(vec![e1(i1 + a, z1 + b, 1.0), e1(z1 + a, i1 + b, 1.0)], 0.0);
            }
            // 𝐆₁(1,1) = I.
            if a <= b {
                push(vec![e1(i1 + a, i1 + b, 1.0)], if a == b { 1.0 } else { 0.0 });
            }
            // 𝐆₁(1,3) = 𝐆₁(2,1).
            push(vec![e1(i1 + a, at1 + b, 1.0), e1(a1 + a, i1 + b, -1.0)], 0.0);
        }
        // Z Cᵀ + B 𝕁 Dᵀ = 0.
        for b in 0..m {
            let mut terms = vec![e1(z1 + a, c1 + b, 1.0)];
            for c in 0..m2 {
                terms.push(e1(i1 + a, bt1 + c, jdt[(c, b)]));
            }
            push(terms, 0.0);
        }
        for b in 0..m2 {
            // 𝐆₁(1,4) = 𝐆₂(2,1).
            push(vec![e1(i1 + a, bt1 + b, 1.0), e2(bb2 + a, i2 + b, -1.0)], 0.0);
            // 𝐆₂(3,1) = 𝐆₂(2,1) 𝕁.
            let mut terms = vec![e2(bj2 + a, i2 + b, 1.0)];
            for c in 0..m2 {
                terms.push(e2(bb2 + a, i2 + c, -jm[(c, b)]));
            }
            push(terms, 0.0);
        }
    }
    for a in 0..m2 {
        for b in a..m2 {
            push(vec![e2(i2 + a, i2 + b, 1.0)], if a == b { 1.0 } else { 0.0 });
        }
    }

    // Loss as a linear functional plus constant.
    let mut lrow = vec![0.0; prob.len()];
    let mut add = |(k, c): (usize, f64)| lrow[k] += c;
    for a in 0..n2 {
        add(e1(a1 + a, a1 + a, 0.5));
        for b in 0..n2 {
            add(e1(a1 + a, i1 + b, -target.a[(a, b)]));
        }
        for b in 0..m2 {
            add(e1(i1 + a, bt1 + b, -target.b[(a, b)]));
        }
    }
    for a in 0..m2 {
        add(e1(bt1 + a, bt1 + a, 0.5));
    }
    for a in 0..m {
        add(e1(c1 + a, c1 + a, 0.5));
        for b in 0..n2 {
            add(e1(c1 + a, i1 + b, -target.c[(a, b)]));
        }
    }
    let loss_const = 0.5 * (target.a.norm_squared() + target.b.norm_squared() + target.c.norm_squared());

    // Move everything to solver coordinates.
    let rows: Vec<Row> = rows
        .iter()
        .map(|row| {
            let mut d = vec![0.0; prob.len()];
            for (k, c) in row {
                d[*k] += c;
            }
            let h = prob.pull_back(&d);
            let top = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            h.into_iter().enumerate().filter(|(_, v)| v.abs() > 1e-15 * top).collect()
        })
        .collect();
    let lrow_h = prob.pull_back(&lrow);

    // Pseudo-inverse of the equality Gram matrix.
    let r = rows.len();
    let mut gram = Mat::zeros(r, r);
    let dense: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            let mut d = vec![0.0; prob.len()];
            for (k, c) in row {
                d[*k] += c;
            }
            d
        })
        .collect();
    for i in 0..r {
        for (k, c) in &rows[i] {
            for j in i..r {
                let v = c * dense[j][*k];
                if v != 0.0 {
                    gram[(i, j)] += v;
                }
            }
        }
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|v| if v > 1e-10 * top { 1.0 / v } else { 0.0 });
    let pinv = &eig.eigenvectors * Mat::from_diagonal(&inv) * eig.eigenvectors.transpose();

    // Reduce the loss modulo the equalities: w ← w − Eᵀλ, c ← c + λᵀrhs.
    let ew = nalgebra::DVector::from_iterator(r, rows.iter().map(|row| row.iter().map(|(k, c)| c * lrow_h[*k]).sum::<f64>()));
    let lam = &pinv * ew;
    let mut lrow_red = lrow_h;
    for (row, l) in rows.iter().zip(lam.iter()) {
        for (k, c) in row {
            lrow_red[*k] -= c * l;
        }
    }
    let loss_const_red = loss_const + lam.iter().zip(&rhs).map(|(l, b)| l * b).sum::<f64>();

    prob.eq_rows = rows;
    prob.eq_rhs = rhs;
    prob.eq_gram_pinv = pinv;
    prob.loss_row = lrow;
    prob.loss_const = loss_const;
    prob.loss_row_red = lrow_red;
    prob.loss_const_red = loss_const_red;
    Ok(prob)
}

/// `P₀` with `Âᵀ P₀ + P₀ Â = −I`.
pub fn init_certificate(a_hat: &Mat) -> Result<Mat> {
    let n = a_hat.nrows();
    Ok(symmetrize(&solve_lyapunov(&a_hat.transpose(), &Mat::identity(n, n))?))
}

/// Warm start built from the target with `Z₀ = 𝕁ₙ` and `P₀` from
/// [`init_certificate`].
pub fn initial_point(prob: &LiftedProblem) -> Result<LiftedPoint> {
    let t = &prob.target;
    let vars = LiftedVars {
        a: t.a.clone(),
        b: t.b.clone(),
        c: t.c.clone(),
        z: symplectic(prob.n),
        p: init_certificate(&t.a)?,
    };
    Ok(prob.lift(&vars))
}

/// `P` with `P ⪰ εI` and `Āᵀ P + P Ā ⪯ −ε P`, if `Ā` is stable enough.
pub fn hurwitz_certificate(a: &Mat, epsilon: f64) -> Option<Mat> {
    let n = a.nrows();
    if !(spectral_abscissa(a) < -epsilon / 2.0) {
        return None;
    }
    let shifted = a + Mat::identity(n, n) * (epsilon / 2.0);
    let p = symmetrize(&solve_lyapunov(&shifted.transpose(), &Mat::identity(n, n)).ok()?);
    let lmin = p.clone().symmetric_eigenvalues().min();
    if !(lmin > 0.0) {
        return None;
    }
    Some(p * (epsilon / lmin).max(1.0))
}

/// Outer iteration between the convex set and the rank-bounded set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheme {
    /// `v ← P_rank(P_convex(v))`.
    Alternating,
    /// Relaxed Douglas–Rachford:
    /// `v ← v + β (P_rank(2 P_convex(v) − v) − P_convex(v))`.
    DouglasRachford { relaxation: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityOptions {
    pub max_iter: usize,
    /// Inner Dykstra sweeps per outer iteration.
    pub inner_iter: usize,
    pub scheme: Scheme,
    /// Give up when the best gap has not dropped by the relative amount
    /// `stall_decrease` within `stall_window` iterations.
    pub stall_window: usize,
    pub stall_decrease: f64,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        FeasibilityOptions {
            max_iter: 2000,
            inner_iter: 5,
            scheme: Scheme::DouglasRachford { relaxation: 1.8 },
            stall_window: 500,
            stall_decrease: 1e-3,
        }
    }
}

/// A point certified feasible for the lifted problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePoint {
    pub point: LiftedPoint,
    pub completion: Completion,
    pub p: Mat,
    pub loss: f64,
    /// Constraint residual of `point`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(Box<FeasiblePoint>),
    Infeasible { iterations: usize, residual: f64 },
}

impl LiftedProblem {
    fn project_affine(&self, v: &mut [f64]) {
        let r: Vec<f64> = self
            .eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .map(|(row, b)| row.iter().map(|(k, c)| c * v[*k]).sum::<f64>() - b)
            .collect();
        let lam = &self.eq_gram_pinv * nalgebra::DVector::from_vec(r);
        for (row, l) in self.eq_rows.iter().zip(lam.iter()) {
            for (k, c) in row {
                v[*k] -= c * l;
            }
        }
    }

    /// Exact projection onto the equalities intersected with the loss bound.
    fn project_polyhedron(&self, v: &mut [f64]) {
        self.project_affine(v);
        let val: f64 = self.loss_row_red.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() + self.loss_const_red;
        let excess = val - self.gamma;
        if excess > 0.0 {
            let nn: f64 = self.loss_row_red.iter().map(|a| a * a).sum();
            if nn > 0.0 {
                for (vi, a) in v.iter_mut().zip(&self.loss_row_red) {
                    *vi -= excess / nn * a;
                }
            }
        }
    }

    /// Projection onto `sym 𝐆₁(1,7) ⪰ εI`, in the scaled metric.
    fn project_lmi1(&self, v: &mut [f64]) {
        let (mut h1, h2) = self.hmat(v);
        let n2 = 2 * self.n;
        let (r1, r7) = (self.block1(Block1::I).start, self.block1(Block1::P).start);
        let a = 1.0 / (self.block_scale1(Block1::I) * self.block_scale1(Block1::P));
        let y = symmetrize(&h1.view((r1, r7), (n2, n2)).into_owned());
        let m1 = &y * a - Mat::identity(n2, n2) * self.epsilon;
        let delta = (project_psd(&m1) - &m1) / a;
        for i in 0..n2 {
            for j in 0..n2 {
                h1[(r1 + i, r7 + j)] += delta[(i, j)];
                h1[(r7 + j, r1 + i)] += delta[(i, j)];
            }
        }
        v.copy_from_slice(&self.hvec(&h1, &h2));
    }

    /// Projection onto `−(𝐆₁(3,7) + 𝐆₁(7,3)) − ε sym 𝐆₁(1,7) ⪰ 0`, in the
    /// scaled metric.
    fn project_lmi2(&self, v: &mut [f64]) {
        let (mut h1, h2) = self.hmat(v);
        let n2 = 2 * self.n;
        let r1 = self.block1(Block1::I).start;
        let r3 = self.block1(Block1::At).start;
        let r7 = self.block1(Block1::P).start;
        let a = 1.0 / (self.block_scale1(Block1::I) * self.block_scale1(Block1::P));
        let b = 1.0 / (self.block_scale1(Block1::At) * self.block_scale1(Block1::P));
        let w = h1.view((r3, r7), (n2, n2)).into_owned();
        let y = symmetrize(&h1.view((r1, r7), (n2, n2)).into_owned());
        let m2 = -(&w + w.transpose()) * b - y * (self.epsilon * a);
        let c = 2.0 * b * b + self.epsilon * self.epsilon * a * a / 2.0;
        let delta = (project_psd(&m2) - &m2) / c;
        for i in 0..n2 {
            for j in 0..n2 {
                let d = delta[(i, j)];
                h1[(r3 + i, r7 + j)] -= b * d;
                h1[(r7 + j, r3 + i)] -= b * d;
                h1[(r1 + i, r7 + j)] -= self.epsilon * a * d / 2.0;
                h1[(r7 + j, r1 + i)] -= self.epsilon * a * d / 2.0;
            }
        }
        v.copy_from_slice(&self.hvec(&h1, &h2));
    }

    /// Approximate projection onto the convex constraint set by Dykstra's
    /// cyclic projections.
    fn project_convex(&self, v: &[f64], sweeps: usize) -> Vec<f64> {
        let len = v.len();
        let mut x = v.to_vec();
        let mut incr = vec![vec![0.0; len]; 3];
        for _ in 0..sweeps.max(1) {
            let before = x.clone();
            for (k, proj) in [0usize, 1, 2].iter().zip([
                Self::project_polyhedron as fn(&Self, &mut [f64]),
                Self::project_lmi1,
                Self::project_lmi2,
            ]) {
                let mut y: Vec<f64> = x.iter().zip(&incr[*k]).map(|(a, b)| a + b).collect();
                let pre = y.clone();
                proj(self, &mut y);
                for i in 0..len {
                    incr[*k][i] = pre[i] - y[i];
                }
                x = y;
            }
            let change: f64 = x.iter().zip(&before).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let size: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            if change <= 1e-12 * (1.0 + size) {
                break;
            }
        }
        self.project_affine(&mut x);
        x
    }

    fn project_rank(&self, v: &[f64]) -> Vec<f64> {
        let (h1, h2) = self.hmat(v);
        self.hvec(&project_psd_rank(&h1, 2 * self.n), &project_psd_rank(&h2, 2 * self.m))
    }

    /// Exact feasible point from `(Ā, B̄)`: completes `Z`, `C̄` and a Hurwitz
    /// certificate, and checks the loss bound.
    fn certify(&self, a: &Mat, b: &Mat) -> Option<(Completion, Mat, f64)> {
        let p = hurwitz_certificate(a, self.epsilon)?;
        let comp = complete(a, b, &self.target.d_meas).ok()?;
        if !(normalized_det(&comp.z).abs() > DET_Z_MIN) {
            return None;
        }
        let l = loss(a, b, &comp.c, &self.target).ok()?;
        let slack = self.gamma * 1e-9 + 1e-20 * (1.0 + self.target.norm().powi(2));
        if l <= self.gamma + slack {
            Some((comp, p, l))
        } else {
            None
        }
    }
}

/// Projection-based search for a point of the lifted feasible set, started
/// from `init`.
///
/// Every rank-bounded iterate's leading factor is completed into an exactly
/// realizable system; the first one that meets the loss bound with a valid
/// Hurwitz certificate is returned together with its exact lifting.
pub fn solve_rank_feasibility(prob: &LiftedProblem, init: &LiftedPoint, opts: &FeasibilityOptions) -> Result<Feasibility> {
    if let Scheme::DouglasRachford { relaxation } = opts.scheme {
        if !(relaxation > 0.0 && relaxation < 2.0) {
            return Err(Error::InvalidParameter(format!("relaxation {relaxation} outside (0, 2)")));
        }
    }
    let mut v = prob.to_vec(init);
    let mut r = v.clone();
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    let mut last = f64::INFINITY;
    for it in 0..=opts.max_iter {
        if let Some(found) = prob.recover(&prob.from_vec(&r)).and_then(|vars| prob.certify(&vars.a, &vars.b)) {
            let (comp, p, l) = found;
            let exact = LiftedVars { a: comp.a.clone(), b: comp.b.clone(), c: comp.c.clone(), z: comp.z.clone(), p: p.clone() };
            let point = prob.lift(&exact);
            let residual = prob.constraint_residual(&point);
            return Ok(Feasibility::Feasible(Box::new(FeasiblePoint {
                point,
                completion: comp,
                p,
                loss: l,
                residual,
                iterations: it,
            })));
        }
        if it == opts.max_iter {
            break;
        }
        let c = prob.project_convex(&v, opts.inner_iter);
        r = match opts.scheme {
            Scheme::Alternating => prob.project_rank(&c),
            Scheme::DouglasRachford { .. } => {
                let refl: Vec<f64> = c.iter().zip(&v).map(|(ci, vi)| 2.0 * ci - vi).collect();
                prob.project_rank(&refl)
            }
        };
        let gap = c.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            / (1.0 + r.iter().map(|a| a * a).sum::<f64>().sqrt());
        if !gap.is_finite() {
            return Err(Error::NumericalStall { residual: gap, iterations: it });
        }
        last = gap;
        if gap < best * (1.0 - opts.stall_decrease) {
            best = gap;
            best_at = it;
        } else if it - best_at >= opts.stall_window {
            return Err(Error::NumericalStall { residual: best, iterations: it });
        }
        v = match opts.scheme {
            Scheme::Alternating => r.clone(),
            Scheme::DouglasRachford { relaxation } => {
                v.iter().zip(&r).zip(&c).map(|((vi, ri), ci)| vi + relaxation * (ri - ci)).collect()
            }
        };
    }
    Ok(Feasibility::Infeasible { iterations: opts.max_iter, residual: last })
}
