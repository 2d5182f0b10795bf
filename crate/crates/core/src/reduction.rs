//! Marginalization of translations and landmarks.
//!
//! For fixed scaled rotations `U = [s_1 R_1, ..., s_N R_N]`, the SBA
//! objective is an unconstrained nonnegative quadratic in the translations
//! and landmark positions. Eliminating them in closed form yields a constant
//! symmetric data matrix `Q` (3N×3N) with objective `trace(Q UᵀU)`, and a
//! linear operator recovering the optimal `[t; p]` from `U`.
//!
//! The quadratic coupling of `[t; p]` is the weighted Laplacian `Q_tp` of
//! the bipartite frame-landmark graph. Anchoring `t_1 = 0` deletes the
//! first frame's row and column, leaving a symmetric positive definite
//! system for connected graphs. Its landmark block is diagonal, so the
//! system is solved through the dense (N−1)×(N−1) Schur complement on the
//! frame block rather than a general sparse factorization.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use crate::error::{Result, SbaError};
use crate::viewgraph::ViewGraph;

/// Frame-count guard for the dense 3N×3N data matrix.
pub const MAX_FRAMES: usize = 5000;

/// The summation blocks of the marginalized quadratic.
///
/// With `e_i` the i-th frame indicator, `ē_k` the k-th landmark indicator
/// and `ũ` the lifted keypoint of an edge:
/// `Q_1 = Σ w (e_i⊗ũ)(e_i⊗ũ)ᵀ` (block diagonal, stored per frame),
/// `Q_2 = Σ w e_i e_iᵀ` and `Q_3 = Σ w ē_k ē_kᵀ` (diagonal),
/// `V_1 = Σ w (e_i⊗ũ) e_iᵀ` (block column per frame),
/// `V_2 = Σ w (e_i⊗ũ) ē_kᵀ` and `V_3 = Σ w e_i ē_kᵀ` (edge-sparse).
#[derive(Debug, Clone)]
pub struct Blocks {
    pub n: usize,
    pub m: usize,
    pub q1: Vec<Matrix3<f64>>,
    pub q2_diag: Vec<f64>,
    pub q3_diag: Vec<f64>,
    pub v1: Vec<Vector3<f64>>,
    /// (frame, landmark, w·ũ) triplets of V_2.
    pub v2: Vec<(usize, usize, Vector3<f64>)>,
    /// (frame, landmark, w) triplets of V_3.
    pub v3: Vec<(usize, usize, f64)>,
}

pub fn build_blocks(graph: &ViewGraph) -> Blocks {
    let (n, m) = (graph.num_frames, graph.num_landmarks);
    let mut b = Blocks {
        n,
        m,
        q1: vec![Matrix3::zeros(); n],
        q2_diag: vec![0.0; n],
        q3_diag: vec![0.0; m],
        v1: vec![Vector3::zeros(); n],
        v2: Vec::with_capacity(graph.edges.len()),
        v3: Vec::with_capacity(graph.edges.len()),
    };
    for e in &graph.edges {
        let wu = e.weight * e.point;
        b.q1[e.frame] += wu * e.point.transpose();
        b.q2_diag[e.frame] += e.weight;
        b.q3_diag[e.landmark] += e.weight;
        b.v1[e.frame] += wu;
        b.v2.push((e.frame, e.landmark, wu));
        b.v3.push((e.frame, e.landmark, e.weight));
    }
    b
}

/// The translation/landmark Laplacian `Q_tp = [[Q_2, −V_3], [−V_3ᵀ, Q_3]]`
/// together with a factorization of its anchored principal submatrix.
#[derive(Debug, Clone)]
pub struct LaplacianSystem {
    pub n: usize,
    pub m: usize,
    q2_diag: Vec<f64>,
    q3_diag: Vec<f64>,
    /// V_3 triplets (frame, landmark, weight).
    v3: Vec<(usize, usize, f64)>,
    /// Per reduced frame (frame index − 1): incident (landmark, weight).
    adj: Vec<Vec<(usize, f64)>>,
    /// Cholesky factor of the Schur complement S = Q̄_2 − V̄_3 Q_3⁻¹ V̄_3ᵀ.
    /// `None` when N = 1 (the reduced frame block is empty).
    schur: Option<Cholesky<f64, Dyn>>,
}

pub fn build_laplacian(blocks: &Blocks) -> Result<LaplacianSystem> {
    let (n, m) = (blocks.n, blocks.m);
    for (k, &d) in blocks.q3_diag.iter().enumerate() {
        if !(d > 0.0) {
            return Err(SbaError::Disconnected(format!(
                "landmark {k} has zero weighted degree"
            )));
        }
    }

    let mut adj = vec![Vec::new(); n.saturating_sub(1)];
    let mut lm_frames: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for &(i, k, w) in &blocks.v3 {
        if i >= 1 {
            adj[i - 1].push((k, w));
        }
        lm_frames[k].push((i, w));
    }

    let schur = if n > 1 {
        let mut s = DMatrix::zeros(n - 1, n - 1);
        for i in 1..n {
            s[(i - 1, i - 1)] = blocks.q2_diag[i];
        }
        for k in 0..m {
            let inv_d = 1.0 / blocks.q3_diag[k];
            for &(a, wa) in &lm_frames[k] {
                if a == 0 {
                    continue;
                }
                for &(b, wb) in &lm_frames[k] {
                    if b == 0 {
                        continue;
                    }
                    s[(a - 1, b - 1)] -= wa * wb * inv_d;
                }
            }
        }
        let scale = s.diagonal().amax();
        let chol = s.clone().cholesky().ok_or_else(|| {
            SbaError::Disconnected("reduced Laplacian factorization failed".into())
        })?;
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b * b));
        if min_pivot <= 1e-12 * scale {
            return Err(SbaError::Disconnected(format!(
                "reduced Laplacian pivot {min_pivot:.3e} below threshold"
            )));
        }
        Some(chol)
    } else {
        None
    };

    Ok(LaplacianSystem {
        n,
        m,
        q2_diag: blocks.q2_diag.clone(),
        q3_diag: blocks.q3_diag.clone(),
        v3: blocks.v3.clone(),
        adj,
        schur,
    })
}

impl LaplacianSystem {
    /// Dense Q_tp, mainly for diagnostics and tests.
    pub fn q_tp_dense(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut q = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            q[(i, i)] = self.q2_diag[i];
        }
        for k in 0..m {
            q[(n + k, n + k)] = self.q3_diag[k];
        }
        for &(i, k, w) in &self.v3 {
            q[(i, n + k)] -= w;
            q[(n + k, i)] -= w;
        }
        q
    }

    /// Solves the anchored system `Q̄_tp x = rhs` for each column of `rhs`
    /// (dimension (N−1+M) × c), via the frame-block Schur complement.
    pub fn solve_reduced(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let nf = n - 1;
        assert_eq!(rhs.nrows(), nf + m);
        let mut out = DMatrix::zeros(nf + m, rhs.ncols());
        for c in 0..rhs.ncols() {
            let f = rhs.view((0, c), (nf, 1));
            let g = rhs.view((nf, c), (m, 1));
            // h = f + V̄_3 Q_3⁻¹ g
            let mut h = DVector::from_fn(nf, |a, _| f[(a, 0)]);
            for a in 0..nf {
                for &(k, w) in &self.adj[a] {
                    h[a] += w * g[(k, 0)] / self.q3_diag[k];
                }
            }
            let t = match &self.schur {
                Some(chol) => chol.solve(&h),
                None => h, // empty when N = 1
            };
            // p = Q_3⁻¹ (g + V̄_3ᵀ t)
            let mut p = DVector::from_fn(m, |k, _| g[(k, 0)]);
            for a in 0..nf {
                for &(k, w) in &self.adj[a] {
                    p[k] += w * t[a];
                }
            }
            for k in 0..m {
                p[k] /= self.q3_diag[k];
            }
            out.view_mut((0, c), (nf, 1)).copy_from(&t);
            out.view_mut((nf, c), (m, 1)).copy_from(&p);
        }
        out
    }

    /// Dumps Q_tp in Matrix Market coordinate format.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let diag = n + m;
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", diag, diag, diag + self.v3.len())?;
        for i in 0..n {
            writeln!(w, "{} {} {:.17e}", i + 1, i + 1, self.q2_diag[i])?;
        }
        for k in 0..m {
            writeln!(w, "{} {} {:.17e}", n + k + 1, n + k + 1, self.q3_diag[k])?;
        }
        for &(i, k, wt) in &self.v3 {
            // lower triangle: row n+k+1 > col i+1
            writeln!(w, "{} {} {:.17e}", n + k + 1, i + 1, -wt)?;
        }
        Ok(())
    }
}

/// The marginalized data matrix and the recovery operator.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub n: usize,
    pub m: usize,
    /// Dense symmetric PSD 3N×3N matrix; `trace(Q UᵀU)` is the marginalized
    /// objective.
    pub q: DMatrix<f64>,
    /// `V̄ᵀ`, the anchored cross term, rows (N−1+M) by columns 3N.
    vbar_t: DMatrix<f64>,
    pub laplacian: LaplacianSystem,
}

pub fn build_data_matrix(graph: &ViewGraph) -> Result<DataMatrix> {
    let (n, m) = (graph.num_frames, graph.num_landmarks);
    if n > MAX_FRAMES {
        return Err(SbaError::InvalidParameter(format!(
            "{n} frames exceeds the dense data-matrix cap of {MAX_FRAMES}"
        )));
    }
    let blocks = build_blocks(graph);
    let lap = build_laplacian(&blocks)?;

    // V_tp = [−V_1, V_2] (3N × (N+M)); V̄ drops the anchored frame column.
    let nf = n - 1;
    let mut vbar_t = DMatrix::zeros(nf + m, 3 * n);
    for i in 1..n {
        for c in 0..3 {
            vbar_t[(i - 1, 3 * i + c)] = -blocks.v1[i][c];
        }
    }
    for &(i, k, wu) in &blocks.v2 {
        for c in 0..3 {
            vbar_t[(nf + k, 3 * i + c)] += wu[c];
        }
    }

    // Q = Q_1 − V̄ L̄⁻¹ V̄ᵀ, assembled column-block-wise through the solver.
    let y = lap.solve_reduced(&vbar_t);
    let mut q = -vbar_t.transpose() * &y;
    for i in 0..n {
        q.view_mut((3 * i, 3 * i), (3, 3))
            .iter_mut()
            .zip(blocks.q1[i].iter())
            .for_each(|(dst, src)| *dst += src);
    }
    let qt = q.transpose();
    q += qt;
    q.scale_mut(0.5);

    Ok(DataMatrix { n, m, q, vbar_t, laplacian: lap })
}

impl DataMatrix {
    /// Marginalized objective `trace(Q UᵀU)` for a factor `U` (r × 3N).
    pub fn objective(&self, u: &DMatrix<f64>) -> f64 {
        (u * &self.q).component_mul(u).sum()
    }

    /// Dumps Q in Matrix Market array format.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix array real general")?;
        writeln!(w, "{} {}", self.q.nrows(), self.q.ncols())?;
        for v in self.q.iter() {
            writeln!(w, "{v:.17e}")?;
        }
        Ok(())
    }
}

/// Recovers the optimal translations and landmarks for a rank-3 factor `U`
/// (3 × 3N): `t_1 = 0` and the remaining `[t; p]` solve the anchored
/// Laplacian system against `V̄ᵀ Uᵀ`.
pub fn recover_translations_points(
    data: &DataMatrix,
    u: &DMatrix<f64>,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    assert_eq!(u.nrows(), 3, "recovery requires a rank-3 factor");
    assert_eq!(u.ncols(), 3 * data.n);
    let rhs = &data.vbar_t * u.transpose();
    let y = data.laplacian.solve_reduced(&rhs);
    let nf = data.n - 1;
    let mut t = vec![Vector3::zeros(); data.n];
    for i in 1..data.n {
        t[i] = Vector3::new(y[(i - 1, 0)], y[(i - 1, 1)], y[(i - 1, 2)]);
    }
    let mut p = vec![Vector3::zeros(); data.m];
    for k in 0..data.m {
        p[k] = Vector3::new(y[(nf + k, 0)], y[(nf + k, 1)], y[(nf + k, 2)]);
    }
    (t, p)
}

/// Test oracle: minimizes the SBA objective over translations (t_1 = 0) and
/// landmarks at fixed `U` by assembling and solving the dense anchored
/// normal equations directly from the edge list, then evaluating the edge
/// sum at the minimizer. Shares no code with the Schur-complement path.
pub fn marginal_objective_oracle(graph: &ViewGraph, u: &DMatrix<f64>) -> f64 {
    let (n, m) = (graph.num_frames, graph.num_landmarks);
    let r = u.nrows();
    let dim = n - 1 + m;
    let fi = |i: usize| i - 1; // reduced frame row
    let lk = |k: usize| n - 1 + k;

    let mut l: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut rhs: DMatrix<f64> = DMatrix::zeros(dim, r);
    for e in &graph.edges {
        let ublock = u.view((0, 3 * e.frame), (r, 3));
        let v = ublock * e.point; // U_i ũ
        let w = e.weight;
        l[(lk(e.landmark), lk(e.landmark))] += w;
        for c in 0..r {
            rhs[(lk(e.landmark), c)] += w * v[c];
        }
        if e.frame >= 1 {
            l[(fi(e.frame), fi(e.frame))] += w;
            l[(fi(e.frame), lk(e.landmark))] -= w;
            l[(lk(e.landmark), fi(e.frame))] -= w;
            for c in 0..r {
                rhs[(fi(e.frame), c)] -= w * v[c];
            }
        }
    }
    let chol = l.cholesky().expect("oracle normal equations not SPD");
    let y = chol.solve(&rhs);

    let mut obj = 0.0;
    for e in &graph.edges {
        let ublock = u.view((0, 3 * e.frame), (r, 3));
        let mut res = ublock * e.point;
        for c in 0..r {
            if e.frame >= 1 {
                res[c] += y[(fi(e.frame), c)];
            }
            res[c] -= y[(lk(e.landmark), c)];
        }
        obj += e.weight * res.norm_squared();
    }
    obj
}
