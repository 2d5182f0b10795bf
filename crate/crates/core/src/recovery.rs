//! From a low-rank factor to a full reconstruction: gauge fixing, rounding
//! to scaled rotations, recovery of the marginalized translations and
//! landmarks, and per-edge residual accounting.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::certificate::Certificate;
use crate::error::{Result, SbaError};
use crate::manifold::{assemble, FactorPoint};
use crate::reduction::{recover_translations_points, DataMatrix};
use crate::viewgraph::ViewGraph;

/// A complete reconstruction: anchored poses (`R_1 = I`, `t_1 = 0`,
/// `s_1 = 1`), landmark positions, the achieved objective and the dual
/// certificate of the solve that produced it.
#[derive(Debug, Clone)]
pub struct Solution {
    pub rotations: Vec<Matrix3<f64>>,
    pub scales: Vec<f64>,
    pub translations: Vec<Vector3<f64>>,
    pub points: Vec<Vector3<f64>>,
    pub objective: f64,
    pub certificate: Certificate,
}

/// Left-multiplies all blocks by the transpose of the first block's
/// orthogonal factor, so the first block becomes the identity. Leaves
/// `UᵀU` (and therefore the objective and any certificate) unchanged.
pub fn gauge_fix(point: &FactorPoint) -> FactorPoint {
    assert_eq!(point.r, 3, "gauge fixing requires a rank-3 factor");
    let g = point.stiefel[0].transpose();
    FactorPoint {
        r: 3,
        stiefel: point.stiefel.iter().map(|b| &g * b).collect(),
        scales: point.scales.clone(),
    }
}

/// Rounds a factor to rank 3: best rank-3 approximation via the top three
/// singular triplets, then per block the scale `s_i = ‖B_i‖_F/√3` and the
/// polar orthogonal factor of `B_i/s_i`. Scales are renormalized by the
/// first block's extracted scale so the anchor `s_1 = 1` survives lossy
/// truncation. Pass-through when the factor is already rank 3.
pub fn round_factor(point: &FactorPoint) -> Result<FactorPoint> {
    if point.r == 3 {
        return Ok(point.clone());
    }
    let n = point.num_frames();
    let u = assemble(point);
    let svd = u.svd(true, true);
    let uu = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    // rows of the rank-3 truncation expressed in the top left-singular basis
    let mut m = DMatrix::zeros(3, 3 * n);
    for j in 0..3 {
        for c in 0..3 * n {
            m[(j, c)] = svd.singular_values[j] * vt[(j, c)];
        }
    }
    let _ = uu; // basis choice is a gauge transformation; dropped

    let mut stiefel = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let b = m.view((0, 3 * i), (3, 3)).clone_owned();
        let s = b.norm() / 3.0_f64.sqrt();
        if s < 1e-12 {
            return Err(SbaError::Degenerate(format!(
                "degenerate block {i} in rounding"
            )));
        }
        let bsvd = (b / s).svd(true, true);
        let pol = bsvd.u.as_ref().unwrap() * bsvd.v_t.as_ref().unwrap();
        stiefel.push(pol);
        scales.push(s);
    }
    let s0 = scales[0];
    for s in scales.iter_mut() {
        *s /= s0;
    }
    scales[0] = 1.0;
    Ok(FactorPoint { r: 3, stiefel, scales })
}

/// Replaces any orthogonal block with negative determinant by its closest
/// proper rotation (SVD with the last singular direction sign-flipped).
/// Returns the fixed factor and the number of flipped blocks — a nonzero
/// count signals a non-tight instance.
pub fn enforce_proper_rotations(point: &FactorPoint) -> (FactorPoint, usize) {
    assert_eq!(point.r, 3);
    let mut out = point.clone();
    let mut flipped = 0;
    for b in out.stiefel.iter_mut() {
        if b.determinant() < 0.0 {
            let svd = b.clone().svd(true, true);
            let u = svd.u.as_ref().unwrap();
            let vt = svd.v_t.as_ref().unwrap();
            let mut d = DMatrix::identity(3, 3);
            d[(2, 2)] = (u * vt).determinant().signum();
            *b = u * d * vt;
            flipped += 1;
        }
    }
    (out, flipped)
}

/// Direct evaluation of the objective over edges at a full reconstruction.
fn direct_objective(
    graph: &ViewGraph,
    rotations: &[Matrix3<f64>],
    scales: &[f64],
    translations: &[Vector3<f64>],
    points: &[Vector3<f64>],
) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| {
            let r = rotations[e.frame] * (scales[e.frame] * e.point) + translations[e.frame]
                - points[e.landmark];
            e.weight * r.norm_squared()
        })
        .sum()
}

/// Recovers the marginalized translations and landmarks for a rounded,
/// gauge-fixed, proper factor and assembles the [`Solution`]. The stored
/// objective is evaluated directly over edges; it must agree with the
/// marginalized form `trace(QUᵀU)` to 1e-8 relative, which is checked.
pub fn build_solution(
    graph: &ViewGraph,
    data: &DataMatrix,
    point: &FactorPoint,
    certificate: Certificate,
) -> Result<Solution> {
    assert_eq!(point.r, 3);
    point.validate()?;
    let u = assemble(point);
    let (translations, points) = recover_translations_points(data, &u);
    let rotations: Vec<Matrix3<f64>> = point
        .stiefel
        .iter()
        .map(|b| Matrix3::from_fn(|a, c| b[(a, c)]))
        .collect();
    for (i, r) in rotations.iter().enumerate() {
        if r.determinant() < 0.0 {
            return Err(SbaError::Numerical(format!(
                "block {i} is not a proper rotation"
            )));
        }
    }
    let objective = direct_objective(graph, &rotations, &point.scales, &translations, &points);
    let marginal = data.objective(&u);
    if (objective - marginal).abs() > 1e-8 * objective.abs().max(1.0) {
        return Err(SbaError::Numerical(format!(
            "objective mismatch: direct {objective} vs marginalized {marginal}"
        )));
    }
    Ok(Solution {
        rotations,
        scales: point.scales.clone(),
        translations,
        points,
        objective,
        certificate,
    })
}

/// `w_ik ‖R_i(s_i ũ_ik) + t_i − p_k‖²` for every edge, in graph order.
/// The residuals sum to the solution objective.
pub fn edge_residuals(graph: &ViewGraph, sol: &Solution) -> Vec<f64> {
    graph
        .edges
        .iter()
        .map(|e| {
            let r = sol.rotations[e.frame] * (sol.scales[e.frame] * e.point)
                + sol.translations[e.frame]
                - sol.points[e.landmark];
            e.weight * r.norm_squared()
        })
        .collect()
}
