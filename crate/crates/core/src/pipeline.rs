//! End-to-end orchestration at the optimization level: two-view residual
//! filtering, the certified solve, the drop-and-resolve heuristic, scale
//! regularization and trajectory metrics against ground truth.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Result, SbaError};
use crate::recovery::{
    build_solution, edge_residuals, enforce_proper_rotations, gauge_fix, round_factor, Solution,
};
use crate::reduction::build_data_matrix;
use crate::staircase::{identity_start, staircase, StaircaseOptions, TraceEvent};
use crate::viewgraph::{GroundTruth, ViewGraph};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub enable_filter: bool,
    /// Pair-median multiplier for the two-view filter.
    pub filter_multiplier: f64,
    pub enable_xm2: bool,
    /// Fraction of edges dropped (floor) before the second solve.
    pub xm2_drop_fraction: f64,
    /// Scale-regularization weight λ ≥ 0.
    pub lambda_reg: f64,
    pub max_rank: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            enable_filter: false,
            filter_multiplier: 3.0,
            enable_xm2: false,
            xm2_drop_fraction: 0.10,
            lambda_reg: 0.0,
            max_rank: 10,
            gradient_tolerance: 1e-8,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.filter_multiplier > 0.0
            && self.xm2_drop_fraction >= 0.0
            && self.xm2_drop_fraction < 1.0
            && self.lambda_reg >= 0.0
            && self.max_rank >= 3
            && self.gradient_tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SbaError::InvalidParameter("invalid pipeline config".into()))
        }
    }

    fn staircase_options(&self, n: usize) -> StaircaseOptions {
        let mut opts = StaircaseOptions::default_for(n);
        opts.lambda = self.lambda_reg;
        opts.max_rank = self.max_rank;
        opts.tr.gradient_tolerance = self.gradient_tolerance;
        opts
    }
}

/// The similarity transform used to align an estimate to ground truth.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Median trajectory errors after similarity alignment: translation parts in
/// ground-truth units, rotation parts in degrees.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub ate_t: f64,
    pub ate_r_deg: f64,
    pub rpe_t: f64,
    pub rpe_r_deg: f64,
    pub alignment: Alignment,
}

impl Metrics {
    pub fn to_json(&self) -> serde_json::Value {
        let r = &self.alignment.rotation;
        serde_json::json!({
            "ate_t": self.ate_t,
            "ate_r_deg": self.ate_r_deg,
            "rpe_t": self.rpe_t,
            "rpe_r_deg": self.rpe_r_deg,
            "alignment": {
                "scale": self.alignment.scale,
                "rotation": (0..9).map(|i| r[(i / 3, i % 3)]).collect::<Vec<f64>>(),
                "translation": [
                    self.alignment.translation.x,
                    self.alignment.translation.y,
                    self.alignment.translation.z,
                ],
            },
        })
    }
}

/// Result of a pipeline run: the solved reconstruction plus bookkeeping
/// about what the heuristics did to the graph.
#[derive(Debug)]
pub struct PipelineOutput {
    pub solution: Solution,
    /// The graph that was actually solved (after filtering/dropping).
    pub graph: ViewGraph,
    pub flip_count: usize,
    pub rank_trajectory: Vec<usize>,
    pub certified: bool,
    /// Staircase time; Q construction and rounding/recovery are separate.
    pub solver_seconds: f64,
    pub build_seconds: f64,
    pub recover_seconds: f64,
    /// First-pass solution when the drop-and-resolve heuristic ran.
    pub first_solution: Option<Solution>,
    pub edges_filtered: usize,
    pub edges_dropped: usize,
    pub trace: Vec<TraceEvent>,
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Closed-form weighted similarity registration: minimizes
/// `Σ w_j ‖s·R·source_j + t − target_j‖²` with a proper rotation.
pub fn align_similarity(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    weights: &[f64],
) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    let k = source.len();
    if k < 3 || target.len() != k || weights.len() != k {
        return Err(SbaError::Degenerate("alignment degenerate".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(SbaError::Degenerate("alignment degenerate".into()));
    }
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for j in 0..k {
        mu_s += weights[j] * source[j];
        mu_t += weights[j] * target[j];
    }
    mu_s /= wsum;
    mu_t /= wsum;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for j in 0..k {
        let a = source[j] - mu_s;
        let b = target[j] - mu_t;
        cov += weights[j] * b * a.transpose();
        var_s += weights[j] * a.norm_squared();
    }
    cov /= wsum;
    var_s /= wsum;
    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    if var_s <= 1e-18 || sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(SbaError::Degenerate("alignment degenerate".into()));
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * vt;
    let scale = (sv[0] + sv[1] + d[(2, 2)] * sv[2]) / var_s;
    if !(scale > 0.0) {
        return Err(SbaError::Degenerate("alignment degenerate".into()));
    }
    let t = mu_t - scale * rot * mu_s;
    Ok((scale, rot, t))
}

/// Removes the edges in `removed` (scored ascending for restoration) from
/// `graph`, then restores the lowest-scored removed edges until the
/// bipartite graph is connected again (which also guarantees coverage).
fn prune_with_reconnect(graph: &ViewGraph, removed: &[(usize, f64)]) -> ViewGraph {
    use std::collections::HashSet;
    let drop: HashSet<usize> = removed.iter().map(|(e, _)| *e).collect();
    let mut keep: Vec<bool> = (0..graph.edges.len()).map(|e| !drop.contains(&e)).collect();

    // union-find over frames (0..n) and landmarks (n..n+m)
    let n = graph.num_frames;
    let mut parent: Vec<usize> = (0..n + graph.num_landmarks).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (e, edge) in graph.edges.iter().enumerate() {
        if keep[e] {
            let a = find(&mut parent, edge.frame);
            let b = find(&mut parent, n + edge.landmark);
            parent[a] = b;
        }
    }
    let mut order: Vec<(usize, f64)> = removed.to_vec();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    for (e, _) in order {
        let edge = &graph.edges[e];
        let a = find(&mut parent, edge.frame);
        let b = find(&mut parent, n + edge.landmark);
        if a != b {
            parent[a] = b;
            keep[e] = true;
        }
    }
    ViewGraph {
        num_frames: n,
        num_landmarks: graph.num_landmarks,
        edges: graph
            .edges
            .iter()
            .enumerate()
            .filter(|(e, _)| keep[*e])
            .map(|(_, edge)| edge.clone())
            .collect(),
    }
}

/// Two-view consistency filter. For every frame pair sharing at least four
/// landmarks, the relative similarity between the two lifted point sets is
/// estimated in closed form and per-landmark residuals are compared against
/// `multiplier ×` the pair median (pairs with a near-zero median are
/// skipped). An edge is removed when it is flagged in a strict majority of
/// the pairs it participates in — majority voting pins the blame on the
/// offending side instead of discarding every edge of a suspicious
/// landmark. Removal never disconnects the graph: the lowest-residual
/// removed edges are restored until connectivity holds.
pub fn two_view_filter(graph: &ViewGraph, multiplier: f64) -> Result<ViewGraph> {
    if multiplier <= 0.0 {
        return Err(SbaError::InvalidParameter("filter multiplier must be positive".into()));
    }
    graph.validate()?;
    let n = graph.num_frames;
    let ne = graph.edges.len();

    let mut per_frame: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n];
    for (e, edge) in graph.edges.iter().enumerate() {
        per_frame[edge.frame].insert(edge.landmark, e);
    }

    let mut pairs = vec![0usize; ne];
    let mut flags = vec![0usize; ne];
    let mut worst = vec![0f64; ne];

    for i in 0..n {
        for j in (i + 1)..n {
            let (small, big) = if per_frame[i].len() <= per_frame[j].len() {
                (&per_frame[i], &per_frame[j])
            } else {
                (&per_frame[j], &per_frame[i])
            };
            let mut shared: Vec<(usize, usize)> = Vec::new(); // (edge in i, edge in j)
            for (&k, &e_small) in small.iter() {
                if let Some(&e_big) = big.get(&k) {
                    let (ei, ej) = if per_frame[i].len() <= per_frame[j].len() {
                        (e_small, e_big)
                    } else {
                        (e_big, e_small)
                    };
                    shared.push((ei, ej));
                }
            }
            if shared.len() < 4 {
                continue;
            }
            let src: Vec<Vector3<f64>> =
                shared.iter().map(|&(ei, _)| graph.edges[ei].point).collect();
            let tgt: Vec<Vector3<f64>> =
                shared.iter().map(|&(_, ej)| graph.edges[ej].point).collect();
            let w: Vec<f64> = shared
                .iter()
                .map(|&(ei, ej)| graph.edges[ei].weight.min(graph.edges[ej].weight))
                .collect();
            // A grossly mis-scaled measurement cannot be trimmed by
            // least-squares residuals alone: its norm dominates the source
            // variance, which collapses the fitted scale and inflates every
            // residual about equally. Pairwise distance ratios
            // ‖tgt_a − tgt_b‖ / ‖src_a − src_b‖ concentrate at the true
            // scale for clean matches regardless of any fit, so seed the
            // registration from the most scale-consistent half.
            let kk = shared.len();
            let keep_count = (kk / 2).max(4);
            let mut order: Vec<usize> = (0..kk).collect();
            if keep_count < kk {
                let mut ratio = vec![f64::INFINITY; kk];
                for a in 0..kk {
                    let mut rs: Vec<f64> = (0..kk)
                        .filter(|&b| b != a)
                        .map(|b| {
                            let ds = (src[a] - src[b]).norm();
                            let dt = (tgt[a] - tgt[b]).norm();
                            if ds > 1e-12 { dt / ds } else { f64::INFINITY }
                        })
                        .collect();
                    ratio[a] = median(&mut rs);
                }
                let s0 = median(&mut ratio.clone());
                if s0.is_finite() && s0 > 0.0 {
                    let dev = |a: usize| {
                        if ratio[a].is_finite() && ratio[a] > 0.0 {
                            (ratio[a] / s0).ln().abs()
                        } else {
                            f64::INFINITY
                        }
                    };
                    order.sort_by(|&a, &b| dev(a).partial_cmp(&dev(b)).unwrap());
                }
            }
            let fit_on = |idx: &[usize]| {
                let src2: Vec<Vector3<f64>> = idx.iter().map(|&a| src[a]).collect();
                let tgt2: Vec<Vector3<f64>> = idx.iter().map(|&a| tgt[a]).collect();
                let w2: Vec<f64> = idx.iter().map(|&a| w[a]).collect();
                align_similarity(&src2, &tgt2, &w2)
            };
            let (mut s, mut rot, mut t) = match fit_on(&order[..keep_count]) {
                Ok(x) => x,
                Err(_) => continue,
            };
            let mut res: Vec<f64> = (0..kk)
                .map(|a| (s * rot * src[a] + t - tgt[a]).norm())
                .collect();
            // polish: refit on the current best-fitting half so residuals
            // are judged against an uncontaminated registration
            if keep_count < kk {
                for _ in 0..2 {
                    let mut ord: Vec<usize> = (0..kk).collect();
                    ord.sort_by(|&a, &b| res[a].partial_cmp(&res[b]).unwrap());
                    let Ok((s2, rot2, t2)) = fit_on(&ord[..keep_count]) else {
                        break;
                    };
                    s = s2;
                    rot = rot2;
                    t = t2;
                    res = (0..kk)
                        .map(|a| (s * rot * src[a] + t - tgt[a]).norm())
                        .collect();
                }
            }
            let med = median(&mut res.clone());
            if med <= 1e-12 {
                continue;
            }
            for (a, &(ei, ej)) in shared.iter().enumerate() {
                pairs[ei] += 1;
                pairs[ej] += 1;
                worst[ei] = worst[ei].max(res[a]);
                worst[ej] = worst[ej].max(res[a]);
                if res[a] > multiplier * med {
                    flags[ei] += 1;
                    flags[ej] += 1;
                }
            }
        }
    }

    let removed: Vec<(usize, f64)> = (0..ne)
        .filter(|&e| pairs[e] > 0 && 2 * flags[e] > pairs[e])
        .map(|e| (e, worst[e]))
        .collect();
    Ok(prune_with_reconnect(graph, &removed))
}

/// One marginalize–solve–round pass with the configured regularization.
pub fn solve_single(graph: &ViewGraph, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    graph.validate()?;
    let n = graph.num_frames;
    let started = Instant::now();
    let data = build_data_matrix(graph)?;
    let built = Instant::now();
    let res = staircase(&data.q, &config.staircase_options(n), identity_start(n))?;
    let solved = Instant::now();
    let rounded = gauge_fix(&round_factor(&res.factor)?);
    let (point, flip_count) = enforce_proper_rotations(&rounded);
    let solution = build_solution(graph, &data, &point, res.certificate)?;
    Ok(PipelineOutput {
        solution,
        graph: graph.clone(),
        flip_count,
        rank_trajectory: res.rank_trajectory,
        certified: res.certified,
        solver_seconds: (solved - built).as_secs_f64(),
        build_seconds: (built - started).as_secs_f64(),
        recover_seconds: solved.elapsed().as_secs_f64(),
        first_solution: None,
        edges_filtered: 0,
        edges_dropped: 0,
        trace: res.trace,
    })
}

/// Solve with an explicit regularization weight (overriding the config).
pub fn solve_regularized(
    graph: &ViewGraph,
    lambda_reg: f64,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let mut cfg = config.clone();
    cfg.lambda_reg = lambda_reg;
    solve_single(graph, &cfg)
}

/// Solve, rank edges by residual, drop the worst `xm2_drop_fraction`
/// (restoring as needed to stay connected), rebuild the data matrix and
/// solve again. Both solutions are returned; the second one, on the pruned
/// graph, is primary and carries the certificate of the pruned problem.
pub fn xm_squared(graph: &ViewGraph, config: &PipelineConfig) -> Result<PipelineOutput> {
    let first = solve_single(graph, config)?;
    let res = edge_residuals(graph, &first.solution);
    let d = (config.xm2_drop_fraction * graph.edges.len() as f64).floor() as usize;
    let mut ranked: Vec<(usize, f64)> = res.iter().cloned().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let removed: Vec<(usize, f64)> = ranked.into_iter().take(d).collect();
    let pruned = prune_with_reconnect(graph, &removed);
    let dropped = graph.edges.len() - pruned.edges.len();
    let second = solve_single(&pruned, config)?;
    Ok(PipelineOutput {
        first_solution: Some(first.solution),
        edges_dropped: dropped,
        solver_seconds: first.solver_seconds + second.solver_seconds,
        build_seconds: first.build_seconds + second.build_seconds,
        recover_seconds: first.recover_seconds + second.recover_seconds,
        ..second
    })
}

/// Full pipeline: optional two-view filter, then either a single solve or
/// the drop-and-resolve variant.
pub fn solve(graph: &ViewGraph, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let mut working = graph.clone();
    let mut edges_filtered = 0;
    if config.enable_filter {
        let filtered = two_view_filter(&working, config.filter_multiplier)?;
        edges_filtered = working.edges.len() - filtered.edges.len();
        working = filtered;
    }
    let mut out = if config.enable_xm2 {
        xm_squared(&working, config)?
    } else {
        solve_single(&working, config)?
    };
    out.edges_filtered = edges_filtered;
    Ok(out)
}

/// Median trajectory errors after aligning the estimated camera centers to
/// ground truth with a similarity transform. Relative errors are taken over
/// consecutive frame pairs.
pub fn compute_metrics(sol: &Solution, gt: &GroundTruth) -> Result<Metrics> {
    compute_metrics_poses(&sol.rotations, &sol.translations, gt)
}

/// Metrics from bare pose lists (e.g. a solution reloaded from disk).
pub fn compute_metrics_poses(
    rotations: &[Matrix3<f64>],
    translations: &[Vector3<f64>],
    gt: &GroundTruth,
) -> Result<Metrics> {
    let n = rotations.len();
    if n < 3 || gt.rotations.len() != n || translations.len() != n {
        return Err(SbaError::InvalidParameter(
            "metrics require at least 3 frames and matching ground truth".into(),
        ));
    }
    let weights = vec![1.0; n];
    let (s, r, t) = align_similarity(translations, &gt.translations, &weights)?;

    let aligned_t: Vec<Vector3<f64>> =
        translations.iter().map(|ti| s * r * ti + t).collect();
    let aligned_r: Vec<Matrix3<f64>> = rotations.iter().map(|ri| r * ri).collect();

    let angle = |a: &Matrix3<f64>, b: &Matrix3<f64>| -> f64 {
        let rel = a.transpose() * b;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    };
    let deg = 180.0 / std::f64::consts::PI;

    let mut ate_t: Vec<f64> = (0..n).map(|i| (aligned_t[i] - gt.translations[i]).norm()).collect();
    let mut ate_r: Vec<f64> =
        (0..n).map(|i| deg * angle(&aligned_r[i], &gt.rotations[i])).collect();

    let mut rpe_t = Vec::with_capacity(n - 1);
    let mut rpe_r = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let j = i + 1;
        let est_rel_t = aligned_r[i].transpose() * (aligned_t[j] - aligned_t[i]);
        let gt_rel_t = gt.rotations[i].transpose() * (gt.translations[j] - gt.translations[i]);
        rpe_t.push((est_rel_t - gt_rel_t).norm());
        let est_rel_r = aligned_r[i].transpose() * aligned_r[j];
        let gt_rel_r = gt.rotations[i].transpose() * gt.rotations[j];
        rpe_r.push(deg * angle(&est_rel_r, &gt_rel_r));
    }

    Ok(Metrics {
        ate_t: median(&mut ate_t),
        ate_r_deg: median(&mut ate_r),
        rpe_t: median(&mut rpe_t),
        rpe_r_deg: median(&mut rpe_r),
        alignment: Alignment { scale: s, rotation: r, translation: t },
    })
}
