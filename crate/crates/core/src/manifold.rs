//! The search space of the low-rank factor: a product of Stiefel frames
//! St(r, 3) and positive per-frame scales with the first scale pinned to 1,
//! together with the tangent-space calculus needed by the trust-region
//! solver for `f(U) = trace(Q UᵀU)` plus an optional scale-regularization
//! term `λ Σ_{i≥2} (s_i² − 1)²`.
//!
//! Each non-anchored block `Y_i = s_i R_i` lives on the cone
//! `{Y : YᵀY = αI, α > 0}`, and the metric is the one inherited from the
//! ambient factor space: for tangents `(V, δ)` (Stiefel velocity `Ṙ = V`,
//! scale velocity `ṡ = δ`) the block moves along `Ẏ = δR + sV`, giving
//! `⟨(V,δ), (V',δ')⟩ = s²⟨V,V'⟩ + 3δδ'`. Under this metric the rotational
//! gradient component is `P_St(E)/s`, which keeps rotations steerable even
//! when a scale shrinks toward zero — with a scale-independent metric a
//! nearly collapsed frame could never recover its orientation.

use nalgebra::DMatrix;

use crate::error::{Result, SbaError};

/// A point `U = [s_1 R_1, ..., s_N R_N]` with `R_i ∈ St(r,3)`, `s_i > 0`,
/// `s_1 = 1`.
#[derive(Debug, Clone)]
pub struct FactorPoint {
    pub r: usize,
    pub stiefel: Vec<DMatrix<f64>>,
    pub scales: Vec<f64>,
}

/// Tangent vector at a [`FactorPoint`]: `R_iᵀV_i` skew, `δ_1 = 0`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub stiefel: Vec<DMatrix<f64>>,
    pub scales: Vec<f64>,
}

impl FactorPoint {
    /// Identity initialization: every frame at the same `r×3` slice of I,
    /// unit scales.
    pub fn identity(n: usize, r: usize) -> Self {
        assert!(r >= 3);
        let mut block = DMatrix::zeros(r, 3);
        for c in 0..3 {
            block[(c, c)] = 1.0;
        }
        FactorPoint {
            r,
            stiefel: vec![block; n],
            scales: vec![1.0; n],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.stiefel.len()
    }

    /// Checks orthonormal columns, positive scales and the anchored first
    /// scale.
    pub fn validate(&self) -> Result<()> {
        if self.stiefel.len() != self.scales.len() || self.stiefel.is_empty() {
            return Err(SbaError::InvalidParameter("inconsistent factor point".into()));
        }
        for (i, r_i) in self.stiefel.iter().enumerate() {
            if r_i.nrows() != self.r || r_i.ncols() != 3 {
                return Err(SbaError::InvalidParameter(format!("frame {i}: bad shape")));
            }
            let gram = r_i.transpose() * r_i;
            if (gram - DMatrix::identity(3, 3)).norm() > 1e-10 {
                return Err(SbaError::Numerical(format!(
                    "frame {i}: columns not orthonormal"
                )));
            }
        }
        if self.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(SbaError::Numerical("non-positive scale".into()));
        }
        if (self.scales[0] - 1.0).abs() > 1e-12 {
            return Err(SbaError::Numerical("first scale not anchored to 1".into()));
        }
        Ok(())
    }

    /// Lifts the point to rank `r_new > r` by zero-padding each Stiefel
    /// block.
    pub fn lift(&self, r_new: usize) -> FactorPoint {
        assert!(r_new >= self.r);
        let stiefel = self
            .stiefel
            .iter()
            .map(|b| {
                let mut nb = DMatrix::zeros(r_new, 3);
                nb.view_mut((0, 0), (self.r, 3)).copy_from(b);
                nb
            })
            .collect();
        FactorPoint { r: r_new, stiefel, scales: self.scales.clone() }
    }
}

impl TangentVector {
    pub fn zeros(point: &FactorPoint) -> Self {
        TangentVector {
            stiefel: point.stiefel.iter().map(|b| DMatrix::zeros(b.nrows(), 3)).collect(),
            scales: vec![0.0; point.scales.len()],
        }
    }

    /// Metric inner product at `point`:
    /// `Σ_i s_i² ⟨V_i, V_i'⟩ + 3 δ_i δ_i'` — the Frobenius product of the
    /// ambient block velocities `δ_i R_i + s_i V_i`.
    pub fn inner(&self, point: &FactorPoint, other: &TangentVector) -> f64 {
        let mut acc = 0.0;
        for (i, (a, b)) in self.stiefel.iter().zip(&other.stiefel).enumerate() {
            acc += point.scales[i] * point.scales[i] * a.dot(b);
        }
        for (a, b) in self.scales.iter().zip(&other.scales) {
            acc += 3.0 * a * b;
        }
        acc
    }

    pub fn norm(&self, point: &FactorPoint) -> f64 {
        self.inner(point, self).sqrt()
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        for b in self.stiefel.iter_mut() {
            b.scale_mut(alpha);
        }
        for s in self.scales.iter_mut() {
            *s *= alpha;
        }
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &TangentVector) {
        for (a, b) in self.stiefel.iter_mut().zip(&other.stiefel) {
            *a += alpha * b;
        }
        for (a, b) in self.scales.iter_mut().zip(&other.scales) {
            *a += alpha * b;
        }
    }
}

/// `U = [s_1 R_1, ..., s_N R_N]` as an `r × 3N` matrix.
pub fn assemble(point: &FactorPoint) -> DMatrix<f64> {
    let n = point.num_frames();
    let mut u = DMatrix::zeros(point.r, 3 * n);
    for i in 0..n {
        u.view_mut((0, 3 * i), (point.r, 3))
            .copy_from(&(point.scales[i] * &point.stiefel[i]));
    }
    u
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Orthogonal decomposition of an ambient `r × 3N` matrix into the tangent
/// space: per frame, scale component `⟨A_i, R_i⟩ / 3` (the radial direction
/// of the block `s·R`, ‖R‖_F² = 3) and Stiefel component
/// `A_i − R_i sym(R_iᵀ A_i)`; the first frame's scale component is pinned
/// to 0.
pub fn project_tangent(point: &FactorPoint, ambient: &DMatrix<f64>) -> TangentVector {
    let n = point.num_frames();
    assert_eq!(ambient.nrows(), point.r);
    assert_eq!(ambient.ncols(), 3 * n);
    let mut out = TangentVector::zeros(point);
    for i in 0..n {
        let a_i = ambient.view((0, 3 * i), (point.r, 3)).clone_owned();
        let r_i = &point.stiefel[i];
        out.scales[i] = if i == 0 { 0.0 } else { a_i.dot(r_i) / 3.0 };
        out.stiefel[i] = &a_i - r_i * sym(&(r_i.transpose() * &a_i));
    }
    out
}

/// First-order retraction: thin QR (with positive-diagonal sign fix) of
/// `R_i + step·V_i` on each Stiefel block and a multiplicative exponential
/// update `s_i ← s_i · exp(step·δ_i / s_i)` on the scales.
pub fn retract(point: &FactorPoint, tangent: &TangentVector, step: f64) -> Result<FactorPoint> {
    let n = point.num_frames();
    let mut stiefel = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let moved = &point.stiefel[i] + step * &tangent.stiefel[i];
        let qr = moved.qr();
        let mut q = qr.q();
        let rr = qr.r();
        for c in 0..3 {
            if rr[(c, c)].abs() <= 1e-14 {
                return Err(SbaError::Numerical(format!("retraction failure on frame {i}")));
            }
            if rr[(c, c)] < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
        stiefel.push(q);
        // the exponent clamp and the floor keep a run whose optimum sits on
        // the s → 0 boundary (degenerate data) from underflowing a scale to
        // exactly zero, which would be unrecoverable
        let arg = (step * tangent.scales[i] / point.scales[i]).clamp(-50.0, 50.0);
        scales.push((point.scales[i] * f64::exp(arg)).max(1e-9));
    }
    scales[0] = 1.0;
    Ok(FactorPoint { r: point.r, stiefel, scales })
}

/// Euclidean gradient `2·U·Q` of `trace(Q UᵀU)`.
pub fn euclidean_gradient(q: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    2.0 * u * q
}

/// `trace(Q UᵀU) + λ Σ_{i≥2} (s_i² − 1)²`.
pub fn cost(q: &DMatrix<f64>, lambda: f64, point: &FactorPoint) -> f64 {
    let u = assemble(point);
    let mut f = (&u * q).component_mul(&u).sum();
    if lambda != 0.0 {
        for &s in point.scales.iter().skip(1) {
            f += lambda * (s * s - 1.0) * (s * s - 1.0);
        }
    }
    f
}

fn dev(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.trace() / 3.0;
    let mut out = m.clone();
    for c in 0..3 {
        out[(c, c)] -= t;
    }
    out
}

/// Riemannian gradient: `(P_St(E_i)/s_i, ⟨R_i, E_i⟩/3)` with `E = 2UQ`,
/// plus the scale-regularization force `(4λ/3) s_i (s_i² − 1)` on the
/// scale components for `i ≥ 2`. Consistent with the block metric
/// `s²⟨V,V'⟩ + 3δδ'`: the pairing of the gradient with any tangent under
/// that metric reproduces the directional derivative `⟨E, δR + sV⟩`.
pub fn riemannian_gradient(q: &DMatrix<f64>, lambda: f64, point: &FactorPoint) -> TangentVector {
    let u = assemble(point);
    let e = euclidean_gradient(q, &u);
    let n = point.num_frames();
    let mut out = TangentVector::zeros(point);
    for i in 0..n {
        let e_i = e.view((0, 3 * i), (point.r, 3)).clone_owned();
        let r_i = &point.stiefel[i];
        out.stiefel[i] = (&e_i - r_i * sym(&(r_i.transpose() * &e_i))) / point.scales[i];
        if i > 0 {
            let s = point.scales[i];
            out.scales[i] = e_i.dot(r_i) / 3.0 + 4.0 / 3.0 * lambda * s * (s * s - 1.0);
        }
    }
    out
}

/// Riemannian Hessian-vector product, exact for the block metric.
///
/// Each non-anchored block is the embedded cone `{Y : YᵀY = αI, α > 0}`
/// with the ambient Frobenius metric, whose orthogonal projection is
/// `P(A) = A − R·dev(sym(RᵀA))`. Differentiating the projected gradient
/// field along the ambient velocity `W_i = δ_i R_i + s_i V_i` gives
/// `Hess[W]_i = P_i(Ė_i − V_i·dev(sym(R_iᵀ Ẽ_i)))`, where `Ẽ` is the
/// Euclidean gradient including the regularizer and `Ė` its derivative;
/// the anchored first block is a plain Stiefel manifold with the usual
/// `−V sym(RᵀẼ)` Weingarten correction. The result is reported back in
/// `(V, δ)` coordinates.
pub fn hessian_vector_product(
    q: &DMatrix<f64>,
    lambda: f64,
    point: &FactorPoint,
    tangent: &TangentVector,
) -> TangentVector {
    let n = point.num_frames();
    let u = assemble(point);
    let e = euclidean_gradient(q, &u);
    // ambient velocity blocks: δ_i R_i + s_i V_i
    let mut du = DMatrix::zeros(point.r, 3 * n);
    for i in 0..n {
        du.view_mut((0, 3 * i), (point.r, 3)).copy_from(
            &(tangent.scales[i] * &point.stiefel[i] + point.scales[i] * &tangent.stiefel[i]),
        );
    }
    let edot = euclidean_gradient(q, &du);

    let mut out = TangentVector::zeros(point);
    for i in 0..n {
        let r_i = &point.stiefel[i];
        let v_i = &tangent.stiefel[i];
        let s = point.scales[i];
        let mut e_i = e.view((0, 3 * i), (point.r, 3)).clone_owned();
        let mut edot_i = edot.view((0, 3 * i), (point.r, 3)).clone_owned();
        if i > 0 && lambda != 0.0 {
            // regularizer contribution to the ambient gradient and its
            // derivative: ∇ = (4λ/3)(s² − 1)·Y with Y = sR
            let w_i = du.view((0, 3 * i), (point.r, 3)).clone_owned();
            e_i += 4.0 / 3.0 * lambda * (s * s - 1.0) * s * r_i;
            edot_i += 4.0 / 3.0
                * lambda
                * (2.0 * s * tangent.scales[i] * s * r_i + (s * s - 1.0) * w_i);
        }
        let correction = if i == 0 {
            sym(&(r_i.transpose() * &e_i))
        } else {
            dev(&sym(&(r_i.transpose() * &e_i)))
        };
        let raw = &edot_i - v_i * correction;
        // project onto the block tangent cone and convert back to (V, δ)
        let delta = if i == 0 { 0.0 } else { raw.dot(r_i) / 3.0 };
        out.scales[i] = delta;
        out.stiefel[i] = (&raw - r_i * sym(&(r_i.transpose() * &raw))) / s;
    }
    out
}
