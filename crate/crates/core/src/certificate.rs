//! Optimality certification of a critical point of the low-rank factor
//! problem.
//!
//! The SDP relaxation has `m = 5N+1` linear constraints forcing the 3×3
//! diagonal blocks of `X = UᵀU` to scaled identities (exact identity for the
//! anchored first frame). At a rank-deficient or globally optimal critical
//! point there is a unique dual vector `y` with `Z(y) Uᵀ = 0` where
//! `Z(y) = Q̃ − Σ y_i A_i` and `Q̃` includes the scale-regularization
//! gradient. `Z ⪰ 0` then certifies global optimality; its minimum eigenpair
//! both tests this and supplies the escape direction for the rank lift.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SbaError};
use crate::manifold::{assemble, FactorPoint};

/// The 5 traceless symmetric basis matrices forcing a block to scaled
/// identity.
pub fn basis_matrices() -> [Matrix3<f64>; 5] {
    [
        Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0),
        Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0),
    ]
}

/// Constraint family of the relaxation: 6 constraints on the first frame
/// (unit diagonal, zero off-diagonals) and 5 per remaining frame.
#[derive(Debug, Clone)]
pub struct ConstraintFamily {
    pub n: usize,
}

impl ConstraintFamily {
    pub fn new(n: usize) -> Self {
        ConstraintFamily { n }
    }

    pub fn num_constraints(&self) -> usize {
        5 * self.n + 1
    }

    /// Dense A_i for tests and small-scale checks; index follows the y
    /// layout: first frame's 6 (three `e_j e_jᵀ` with b = 1, three
    /// symmetric off-diagonal units with b = 0), then 5 per later frame.
    pub fn matrix(&self, idx: usize) -> DMatrix<f64> {
        let dim = 3 * self.n;
        let mut a = DMatrix::zeros(dim, dim);
        let b = basis_matrices();
        if idx < 6 {
            match idx {
                0..=2 => a[(idx, idx)] = 1.0,
                3..=5 => {
                    let unit = &b[idx - 1]; // B³, B⁴, B⁵ are the off-diagonal units
                    for rr in 0..3 {
                        for cc in 0..3 {
                            a[(rr, cc)] = unit[(rr, cc)];
                        }
                    }
                }
                _ => unreachable!(),
            }
        } else {
            let k = 1 + (idx - 6) / 5;
            let l = (idx - 6) % 5;
            for rr in 0..3 {
                for cc in 0..3 {
                    a[(3 * k + rr, 3 * k + cc)] = b[l][(rr, cc)];
                }
            }
        }
        a
    }

    pub fn rhs(&self, idx: usize) -> f64 {
        if idx < 3 { 1.0 } else { 0.0 }
    }

    /// `max_i |⟨A_i, UᵀU⟩ − b_i|` straight from the block Grams.
    pub fn feasibility_residual(&self, point: &FactorPoint) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, r_i) in point.stiefel.iter().enumerate() {
            let s2 = point.scales[i] * point.scales[i];
            let gram = r_i.transpose() * r_i * s2;
            if i == 0 {
                for d in 0..3 {
                    worst = worst.max((gram[(d, d)] - 1.0).abs());
                }
            } else {
                worst = worst.max((gram[(0, 0)] - gram[(1, 1)]).abs());
                worst = worst.max((gram[(1, 1)] - gram[(2, 2)]).abs());
            }
            worst = worst.max(2.0 * gram[(0, 1)].abs());
            worst = worst.max(2.0 * gram[(0, 2)].abs());
            worst = worst.max(2.0 * gram[(1, 2)].abs());
        }
        worst
    }
}

/// Dual certificate of a staircase iterate.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub y: DVector<f64>,
    pub min_eigenvalue: f64,
    pub min_eigenvector: DVector<f64>,
    /// `‖Z(y)Uᵀ‖_F`
    pub kkt_residual: f64,
    /// Relative suboptimality from the rigorous dual bound.
    pub eta: f64,
    /// Same gap with the safe (inexact-dual) bound; nonnegative by
    /// construction when the bound is valid.
    pub eta_rigorous: f64,
    pub rho_hat: f64,
    pub rho_dual: f64,
    pub trace_x: f64,
    pub certified: bool,
}

/// Regularized data term `Q̃ = Q + D` applied to `Uᵀ`, where `D` is the
/// diagonal scale-regularization gradient `2λ(X_{3i,3i}−1)` on the last
/// diagonal entry of each non-anchored block.
fn reg_diag(lambda: f64, point: &FactorPoint) -> DVector<f64> {
    let n = point.num_frames();
    let mut d = DVector::zeros(3 * n);
    if lambda != 0.0 {
        for i in 1..n {
            let x = point.scales[i] * point.scales[i];
            d[3 * i + 2] = 2.0 * lambda * (x - 1.0);
        }
    }
    d
}

/// Solves the per-frame least-squares systems equating the block rows of
/// `Q̃Uᵀ` with `(Σ_ℓ y_ℓ B^ℓ) U_kᵀ`. Exact at critical points by LICQ;
/// otherwise the least-squares residual is reported through
/// `kkt_residual`.
pub fn assemble_dual(q: &DMatrix<f64>, lambda: f64, point: &FactorPoint) -> Result<DVector<f64>> {
    let n = point.num_frames();
    let u = assemble(point);
    let mut c = q * u.transpose(); // 3N × r
    let d = reg_diag(lambda, point);
    for row in 0..3 * n {
        if d[row] != 0.0 {
            for col in 0..point.r {
                c[(row, col)] += d[row] * u[(col, row)];
            }
        }
    }

    let b = basis_matrices();
    let mut y = DVector::zeros(5 * n + 1);
    for k in 0..n {
        let r_k = &point.stiefel[k];
        if r_k.transpose().svd(false, false).singular_values.min() <= 1e-10 {
            return Err(SbaError::Degenerate(format!("infeasible point: frame {k}")));
        }
        // M = C_k R̄_k collapses the r-dimension; rhs_ℓ = s_k⟨B^ℓ, M⟩ and the
        // Gram is s_k²⟨B^ℓ, B^ℓ'⟩ because R̄_k has orthonormal columns.
        let c_k = c.view((3 * k, 0), (3, point.r));
        let m = c_k * r_k;
        let s = point.scales[k];
        if k == 0 {
            // 6 constraints: diagonal units (Gram 1) and off-diagonal units
            // (Gram 2); all mutually orthogonal.
            for j in 0..3 {
                y[j] = m[(j, j)];
            }
            for (j, unit) in b[2..5].iter().enumerate() {
                y[3 + j] = unit.dot(&m) / 2.0;
            }
        } else {
            let mut gram = DMatrix::zeros(5, 5);
            let mut rhs = DVector::zeros(5);
            for l in 0..5 {
                for l2 in 0..5 {
                    gram[(l, l2)] = s * s * b[l].dot(&b[l2]);
                }
                rhs[l] = s * b[l].dot(&m);
            }
            let sol = gram
                .lu()
                .solve(&rhs)
                .ok_or_else(|| SbaError::Numerical("dual block solve failed".into()))?;
            for l in 0..5 {
                y[6 + 5 * (k - 1) + l] = sol[l];
            }
        }
    }
    Ok(y)
}

/// Matrix-free certificate matrix `Z(y) = Q̃ − Σ y_i A_i`: `Q` plus the
/// regularization diagonal minus per-frame 3×3 corrections.
pub struct ZOperator<'a> {
    q: &'a DMatrix<f64>,
    /// Per-frame correction `S_k = Σ_ℓ y_{k,ℓ} B^ℓ` (plus the diagonal for
    /// frame 1), merged with the regularization diagonal.
    corrections: Vec<Matrix3<f64>>,
}

impl<'a> ZOperator<'a> {
    pub fn new(
        q: &'a DMatrix<f64>,
        y: &DVector<f64>,
        lambda: f64,
        point: &FactorPoint,
    ) -> ZOperator<'a> {
        let n = point.num_frames();
        let b = basis_matrices();
        let d = reg_diag(lambda, point);
        let mut corrections = Vec::with_capacity(n);
        for k in 0..n {
            let mut s = Matrix3::zeros();
            if k == 0 {
                for j in 0..3 {
                    s[(j, j)] += y[j];
                }
                for (j, unit) in b[2..5].iter().enumerate() {
                    s += y[3 + j] * unit;
                }
            } else {
                for l in 0..5 {
                    s += y[6 + 5 * (k - 1) + l] * b[l];
                }
            }
            // regularization enters Z with a plus sign
            for j in 0..3 {
                s[(j, j)] -= d[3 * k + j];
            }
            corrections.push(s);
        }
        ZOperator { q, corrections }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = self.q * w;
        for (k, s) in self.corrections.iter().enumerate() {
            for rr in 0..3 {
                let mut acc = 0.0;
                for cc in 0..3 {
                    acc += s[(rr, cc)] * w[3 * k + cc];
                }
                out[3 * k + rr] -= acc;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut z = self.q.clone();
        for (k, s) in self.corrections.iter().enumerate() {
            for rr in 0..3 {
                for cc in 0..3 {
                    z[(3 * k + rr, 3 * k + cc)] -= s[(rr, cc)];
                }
            }
        }
        z
    }

    /// Upper bound on λ_max(Z) for the Lanczos spectral shift.
    fn spectral_upper_bound(&self) -> f64 {
        let mut b = self.q.norm();
        for s in &self.corrections {
            b += s.norm();
        }
        b.max(1.0)
    }
}

/// Minimum eigenpair of a symmetric operator: Lanczos (full
/// reorthogonalization) on the shifted operator `σI − Z`, with a dense
/// eigendecomposition fallback when the Ritz residual misses `tol`.
pub fn min_eigenpair(op: &ZOperator, tol: f64) -> Result<(f64, DVector<f64>)> {
    let dim = op.dim();
    let sigma = op.spectral_upper_bound();
    let max_iters = dim.min(160);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e16e);
    let mut v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    v /= v.norm();
    let mut basis: Vec<DVector<f64>> = vec![v.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let mut best: Option<(f64, DVector<f64>)> = None;
    for j in 0..max_iters {
        let vj = basis[j].clone();
        let av = sigma * &vj - op.apply(&vj);
        alphas.push(vj.dot(&av));
        let mut w = av;
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w -= c * q;
            }
        }
        let beta = w.norm();

        // check the current Ritz pair periodically
        if (j >= 5 && j % 5 == 0) || j + 1 == max_iters || beta <= 1e-13 {
            let k = alphas.len();
            let mut t = DMatrix::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alphas[i];
                if i + 1 < k {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let eig = t.symmetric_eigen();
            let (mut idx, mut lam) = (0, f64::NEG_INFINITY);
            for (i, &e) in eig.eigenvalues.iter().enumerate() {
                if e > lam {
                    lam = e;
                    idx = i;
                }
            }
            let mut ritz = DVector::zeros(dim);
            for i in 0..k {
                ritz += eig.eigenvectors[(i, idx)] * &basis[i];
            }
            let nrm = ritz.norm();
            if nrm > 0.0 {
                ritz /= nrm;
                let lam_z = sigma - lam;
                let res = (op.apply(&ritz) - lam_z * &ritz).norm();
                if res <= tol {
                    return Ok((lam_z, ritz));
                }
                best = Some((lam_z, ritz));
            }
        }
        if beta <= 1e-13 {
            break;
        }
        betas.push(beta);
        basis.push(w / beta);
    }

    // dense fallback
    if dim <= 2000 {
        let z = op.to_dense();
        let eig = z.symmetric_eigen();
        let (mut idx, mut lam) = (0, f64::INFINITY);
        for (i, &e) in eig.eigenvalues.iter().enumerate() {
            if e < lam {
                lam = e;
                idx = i;
            }
        }
        let v = eig.eigenvectors.column(idx).clone_owned();
        return Ok((lam, v));
    }
    match best {
        Some((lam, v)) => Err(SbaError::Numerical(format!(
            "eigenpair iteration did not converge; best Ritz value {lam:.6e}, vector norm {:.3e}",
            v.norm()
        ))),
        None => Err(SbaError::Numerical("eigenpair iteration produced no Ritz pair".into())),
    }
}

/// Relative suboptimality gap.
pub fn suboptimality(rho_hat: f64, rho_lower: f64) -> f64 {
    (rho_hat - rho_lower) / (1.0 + rho_hat.abs() + rho_lower.abs())
}

/// Lower bound on the SDP optimum: `max(0, λ_min(Z))·tr(X) + ρ_dual`.
pub fn rigorous_lower_bound(rho_dual: f64, lambda_min_z: f64, trace_x: f64) -> f64 {
    lambda_min_z.max(0.0) * trace_x + rho_dual
}

/// Weaker bound that stays valid when `y` comes from an inexact critical
/// point: the negative part of λ_min charges the full trace.
pub fn safe_lower_bound(rho_dual: f64, lambda_min_z: f64, trace_x: f64) -> f64 {
    lambda_min_z.min(0.0) * trace_x + rho_dual
}

/// Full certification of a candidate point: dual assembly, Z eigenpair,
/// KKT residual and suboptimality gaps. `rho_hat` is the (regularized)
/// primal value at `point`.
pub fn certify(
    q: &DMatrix<f64>,
    lambda: f64,
    point: &FactorPoint,
    rho_hat: f64,
) -> Result<Certificate> {
    let n = point.num_frames();
    let qnorm = q.norm();
    let y = assemble_dual(q, lambda, point)?;
    let z = ZOperator::new(q, &y, lambda, point);

    let u = assemble(point);
    let mut kkt2 = 0.0;
    for col in 0..point.r {
        let urow = DVector::from_fn(3 * n, |i, _| u[(col, i)]);
        kkt2 += z.apply(&urow).norm_squared();
    }
    let kkt_residual = kkt2.sqrt();

    let (min_eigenvalue, min_eigenvector) = min_eigenpair(&z, 1e-8 * qnorm.max(1.0))?;

    let mut trace_x = 0.0;
    for &s in &point.scales {
        trace_x += 3.0 * s * s;
    }
    // dual value: b·y − λ Σ_{i≥2} (X_{3i,3i}² − 1)
    let mut rho_dual = y[0] + y[1] + y[2];
    if lambda != 0.0 {
        for &s in point.scales.iter().skip(1) {
            let x = s * s;
            rho_dual -= lambda * (x * x - 1.0);
        }
    }

    let eta = suboptimality(rho_hat, rigorous_lower_bound(rho_dual, min_eigenvalue, trace_x));
    let eta_rigorous =
        suboptimality(rho_hat, safe_lower_bound(rho_dual, min_eigenvalue, trace_x));
    let certified = min_eigenvalue >= -1e-6 * qnorm.max(1.0);

    Ok(Certificate {
        y,
        min_eigenvalue,
        min_eigenvector,
        kkt_residual,
        eta,
        eta_rigorous,
        rho_hat,
        rho_dual,
        trace_x,
        certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{cost, retract, riemannian_gradient, TangentVector};
    use crate::reduction::build_data_matrix;
    use crate::viewgraph::synth_scene;

    fn gt_point(gt: &crate::viewgraph::GroundTruth) -> FactorPoint {
        FactorPoint {
            r: 3,
            stiefel: gt
                .rotations
                .iter()
                .map(|r| DMatrix::from_fn(3, 3, |a, b| r[(a, b)]))
                .collect(),
            scales: gt.scales.clone(),
        }
    }

    fn random_point(n: usize, r: usize, rng: &mut ChaCha8Rng) -> FactorPoint {
        let mut stiefel = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        for i in 0..n {
            let a = DMatrix::from_fn(r, 3, |_, _| rng.gen_range(-1.0..1.0));
            let qr = a.qr();
            let mut qmat = qr.q();
            let rr = qr.r();
            for c in 0..3 {
                if rr[(c, c)] < 0.0 {
                    qmat.column_mut(c).neg_mut();
                }
            }
            stiefel.push(qmat);
            scales.push(if i == 0 { 1.0 } else { f64::exp(rng.gen_range(-0.5..0.5)) });
        }
        FactorPoint { r, stiefel, scales }
    }

    #[test]
    fn family_count_and_rhs() {
        let fam = ConstraintFamily::new(4);
        assert_eq!(fam.num_constraints(), 21);
        assert_eq!(fam.rhs(0), 1.0);
        assert_eq!(fam.rhs(2), 1.0);
        assert_eq!(fam.rhs(3), 0.0);
        assert_eq!(fam.rhs(20), 0.0);
    }

    #[test]
    fn family_matrices_block_local_symmetric() {
        let fam = ConstraintFamily::new(3);
        for i in 0..fam.num_constraints() {
            let a = fam.matrix(i);
            assert!((&a - a.transpose()).norm() == 0.0, "constraint {i} not symmetric");
            // support confined to one diagonal block
            let k = if i < 6 { 0 } else { 1 + (i - 6) / 5 };
            for rr in 0..9 {
                for cc in 0..9 {
                    if a[(rr, cc)] != 0.0 {
                        assert_eq!(rr / 3, k);
                        assert_eq!(cc / 3, k);
                    }
                }
            }
        }
    }

    #[test]
    fn feasibility_residual_small_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_point(5, 4, &mut rng);
        let fam = ConstraintFamily::new(5);
        assert!(fam.feasibility_residual(&p) <= 1e-10);
        // cross-check against the dense definition
        let u = assemble(&p);
        let x = u.transpose() * &u;
        let mut worst: f64 = 0.0;
        for i in 0..fam.num_constraints() {
            let a = fam.matrix(i);
            worst = worst.max(((&a.component_mul(&x)).sum() - fam.rhs(i)).abs());
        }
        assert!(worst <= 1e-10);
    }

    #[test]
    fn licq_full_rank_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for n in [2usize, 4, 6] {
            let p = random_point(n, 4, &mut rng);
            let u = assemble(&p);
            let fam = ConstraintFamily::new(n);
            let m = fam.num_constraints();
            let mut stacked = DMatrix::zeros(m, 3 * n * 4);
            for i in 0..m {
                let au = fam.matrix(i) * u.transpose();
                for (j, v) in au.iter().enumerate() {
                    stacked[(i, j)] = *v;
                }
            }
            let rank = stacked.svd(false, false).rank(1e-9);
            assert_eq!(rank, m, "LICQ rank deficiency at N={n}");
        }
    }

    #[test]
    fn dual_zero_q() {
        let p = FactorPoint::identity(3, 3);
        let q = DMatrix::zeros(9, 9);
        let y = assemble_dual(&q, 0.0, &p).unwrap();
        assert!(y.amax() <= 1e-14);
        let cert = certify(&q, 0.0, &p, 0.0).unwrap();
        assert!(cert.kkt_residual <= 1e-14);
        assert!(cert.certified);
    }

    #[test]
    fn z_operator_matches_dense_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 4;
        let p = random_point(n, 3, &mut rng);
        let a = DMatrix::from_fn(3 * n, 3 * n, |_, _| rng.gen_range(-1.0..1.0));
        let q = &a * a.transpose();
        let y = DVector::from_fn(5 * n + 1, |_, _| rng.gen_range(-1.0..1.0));
        let z = ZOperator::new(&q, &y, 0.3, &p);
        let dense = z.to_dense();
        assert!((&dense - dense.transpose()).norm() <= 1e-12 * dense.norm());
        // apply on canonical basis reassembles the dense matrix
        for c in 0..3 * n {
            let mut e = DVector::zeros(3 * n);
            e[c] = 1.0;
            assert!((z.apply(&e) - dense.column(c)).norm() <= 1e-12 * dense.norm());
        }
        // Z differs from Q only on diagonal blocks
        let diff = &dense - &q;
        for rr in 0..3 * n {
            for cc in 0..3 * n {
                if rr / 3 != cc / 3 {
                    assert_eq!(diff[(rr, cc)], 0.0);
                }
            }
        }
    }

    #[test]
    fn min_eigenpair_diagonal() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, -3.0]));
        let p = FactorPoint::identity(1, 3);
        let y = DVector::zeros(6);
        let z = ZOperator::new(&q, &y, 0.0, &p);
        let (lam, v) = min_eigenpair(&z, 1e-10).unwrap();
        assert!((lam + 3.0).abs() <= 1e-9);
        assert!((v[2].abs() - 1.0).abs() <= 1e-9);

        let id = DMatrix::identity(3, 3);
        let z2 = ZOperator::new(&id, &y, 0.0, &p);
        let (lam2, v2) = min_eigenpair(&z2, 1e-10).unwrap();
        assert!((lam2 - 1.0).abs() <= 1e-9);
        assert!((v2.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn min_eigenpair_random_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let n = 6;
        let p = random_point(n, 3, &mut rng);
        let a = DMatrix::from_fn(3 * n, 3 * n, |_, _| rng.gen_range(-1.0..1.0));
        let q = &a * a.transpose() - 2.0 * DMatrix::identity(3 * n, 3 * n);
        let y = DVector::zeros(5 * n + 1);
        let z = ZOperator::new(&q, &y, 0.0, &p);
        let (lam, v) = min_eigenpair(&z, 1e-9).unwrap();
        let dense_min = q.clone().symmetric_eigen().eigenvalues.min();
        assert!((lam - dense_min).abs() <= 1e-7 * q.norm());
        assert!((z.apply(&v) - lam * &v).norm() <= 1e-8 * q.norm().max(1.0));
    }

    #[test]
    fn certificate_at_noiseless_optimum() {
        let (g, gt) = synth_scene(8, 40, 0.5, 0.0, 40).unwrap();
        let data = build_data_matrix(&g).unwrap();
        let p = gt_point(&gt);
        let rho = cost(&data.q, 0.0, &p);
        let cert = certify(&data.q, 0.0, &p, rho).unwrap();
        let qn = data.q.norm();
        assert!(cert.kkt_residual <= 1e-8 * qn, "kkt {}", cert.kkt_residual);
        assert!(cert.min_eigenvalue >= -1e-6 * qn, "eig {}", cert.min_eigenvalue);
        assert!(cert.certified);
        assert!(cert.eta.abs() <= 1e-6, "eta {}", cert.eta);
        assert!(cert.eta_rigorous <= 1e-6, "eta_rig {}", cert.eta_rigorous);
        // Z U^T ≈ 0 column-wise
        let z = ZOperator::new(&data.q, &cert.y, 0.0, &p);
        let u = assemble(&p);
        for c in 0..3 {
            let col = DVector::from_fn(u.ncols(), |i, _| u[(c, i)]);
            assert!(z.apply(&col).norm() <= 1e-8 * qn);
        }
    }

    #[test]
    fn kkt_residual_tracks_gradient_norm() {
        // the least-squares residual of the dual fit equals half the
        // Riemannian gradient norm at any feasible point (numerically)
        let (g, gt) = synth_scene(5, 20, 0.6, 0.4, 41).unwrap();
        let data = build_data_matrix(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut p = gt_point(&gt);
        // perturb away from criticality
        let ambient =
            DMatrix::from_fn(3, 3 * p.num_frames(), |_, _| rng.gen_range(-0.1..0.1));
        let tv = crate::manifold::project_tangent(&p, &ambient);
        p = retract(&p, &tv, 1.0).unwrap();
        let rho = cost(&data.q, 0.0, &p);
        let cert = certify(&data.q, 0.0, &p, rho).unwrap();
        assert!(cert.kkt_residual > 0.0);
        let grad = riemannian_gradient(&data.q, 0.0, &p);
        // same order of magnitude
        assert!(cert.kkt_residual >= 0.05 * grad.norm(&p));
        assert!(cert.kkt_residual <= 20.0 * grad.norm(&p).max(1e-12));
        let _ = TangentVector::zeros(&p);
    }

    #[test]
    fn suboptimality_arithmetic() {
        assert_eq!(suboptimality(5.0, 5.0), 0.0);
        assert!((suboptimality(1.0, 0.0) - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn rigorous_bound_arithmetic() {
        assert_eq!(rigorous_lower_bound(3.0, -0.1, 10.0), 3.0);
        assert_eq!(rigorous_lower_bound(3.0, 0.2, 10.0), 5.0);
        assert_eq!(safe_lower_bound(3.0, -0.1, 10.0), 2.0);
    }

    #[test]
    fn weak_duality_on_certified_instance() {
        let (g, gt) = synth_scene(6, 30, 0.5, 0.0, 43).unwrap();
        let data = build_data_matrix(&g).unwrap();
        let p = gt_point(&gt);
        let rho = cost(&data.q, 0.0, &p);
        let cert = certify(&data.q, 0.0, &p, rho).unwrap();
        let by = cert.y[0] + cert.y[1] + cert.y[2];
        assert!(by <= rho + 1e-9 * (1.0 + rho.abs()));
    }
}
