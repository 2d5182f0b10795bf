//! View graphs: frames, landmarks, and lifted 3D keypoint observations.
//!
//! A view graph is a bipartite graph between camera frames and 3D landmarks.
//! An edge carries a 3D keypoint measurement obtained by lifting a normalized
//! 2D keypoint with a depth value, `point = d * [u; 1]`, together with a
//! positive confidence weight. The pose convention is camera-to-world: frame
//! `i` maps its camera-frame measurement into the global frame via
//! `R_i (s_i * point) + t_i`.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbaError};

/// Normalized 2D keypoint (image coordinates divided by focal length).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint2D {
    pub u: Vector2<f64>,
}

/// A 2D observation of a landmark by a frame, before depth lifting.
#[derive(Debug, Clone, Copy)]
pub struct Observation2D {
    pub frame: usize,
    pub landmark: usize,
    pub keypoint: Keypoint2D,
}

/// View graph with raw 2D keypoints (e.g. straight out of a BAL file).
#[derive(Debug, Clone)]
pub struct ViewGraph2D {
    pub num_frames: usize,
    pub num_landmarks: usize,
    pub observations: Vec<Observation2D>,
    /// Duplicate (frame, landmark) observations dropped at construction.
    pub duplicates_dropped: usize,
    /// Landmarks with zero observations removed by index compaction.
    pub unobserved_removed: usize,
}

/// A lifted 3D observation: `point = d * [u; 1]` with positive depth.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub frame: usize,
    pub landmark: usize,
    pub point: Vector3<f64>,
    pub weight: f64,
}

/// Bipartite frame-landmark graph with lifted 3D measurements.
#[derive(Debug, Clone)]
pub struct ViewGraph {
    pub num_frames: usize,
    pub num_landmarks: usize,
    pub edges: Vec<Edge>,
}

/// Ground-truth poses, scales and landmark positions, anchored at frame 0.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3<f64>>,
    pub scales: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
}

impl ViewGraph {
    /// Validates all structural invariants: index ranges, positive weights,
    /// finite positive-depth points, no duplicate edges, every frame and
    /// landmark covered, and bipartite connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 || self.num_landmarks == 0 {
            return Err(SbaError::Graph(
                "graph must have at least one frame and one landmark".into(),
            ));
        }
        if self.edges.is_empty() {
            return Err(SbaError::Graph("empty edge list".into()));
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        let mut frame_deg = vec![0usize; self.num_frames];
        let mut lm_deg = vec![0usize; self.num_landmarks];
        for e in &self.edges {
            if e.frame >= self.num_frames || e.landmark >= self.num_landmarks {
                return Err(SbaError::Graph(format!(
                    "index out of range: edge ({}, {})",
                    e.frame, e.landmark
                )));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(SbaError::Graph(format!(
                    "non-positive weight on edge ({}, {})",
                    e.frame, e.landmark
                )));
            }
            if !e.point.iter().all(|v| v.is_finite()) {
                return Err(SbaError::Graph(format!(
                    "non-finite point on edge ({}, {})",
                    e.frame, e.landmark
                )));
            }
            if !(e.point.z > 0.0) {
                return Err(SbaError::Graph(format!(
                    "non-positive depth on edge ({}, {})",
                    e.frame, e.landmark
                )));
            }
            if !seen.insert((e.frame, e.landmark)) {
                return Err(SbaError::Graph(format!(
                    "duplicate edge ({}, {})",
                    e.frame, e.landmark
                )));
            }
            frame_deg[e.frame] += 1;
            lm_deg[e.landmark] += 1;
        }
        if let Some(i) = frame_deg.iter().position(|&d| d == 0) {
            return Err(SbaError::Graph(format!("frame {i} has no observations")));
        }
        if let Some(k) = lm_deg.iter().position(|&d| d == 0) {
            return Err(SbaError::Graph(format!("landmark {k} has no observations")));
        }
        let comps = check_connectivity(self);
        if comps != 1 {
            return Err(SbaError::Graph(format!(
                "graph has {comps} connected components"
            )));
        }
        Ok(())
    }

    /// Weighted SBA objective evaluated directly over the edges.
    pub fn objective(&self, gt: &GroundTruth) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let r = gt.rotations[e.frame] * (gt.scales[e.frame] * e.point)
                    + gt.translations[e.frame]
                    - gt.points[e.landmark];
                e.weight * r.norm_squared()
            })
            .sum()
    }
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let n = self.rotations.len();
        if self.translations.len() != n || self.scales.len() != n {
            return Err(SbaError::Graph("ground truth length mismatch".into()));
        }
        for (i, r) in self.rotations.iter().enumerate() {
            let err = (r.transpose() * r - Matrix3::identity()).norm();
            if err > 1e-12 || (r.determinant() - 1.0).abs() > 1e-9 {
                return Err(SbaError::Graph(format!("rotation {i} is not in SO(3)")));
            }
        }
        if self.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(SbaError::Graph("non-positive scale".into()));
        }
        let anchored = (self.rotations[0] - Matrix3::identity()).norm() <= 1e-12
            && self.translations[0].norm() <= 1e-12
            && (self.scales[0] - 1.0).abs() <= 1e-12;
        if !anchored {
            return Err(SbaError::Graph("first frame is not anchored".into()));
        }
        Ok(())
    }
}

// -------------------------------------------------------------------------
// BAL parsing
// -------------------------------------------------------------------------

/// Parses the BAL text layout: a header `N M K`, K observation lines
/// `cam_idx point_idx x y`, then 9 reals per camera (axis-angle rotation,
/// translation, focal, k1, k2) and 3 reals per point.
///
/// Keypoints are taken as already normalized by focal length; distortion
/// parameters are ignored. BAL cameras are world-to-camera; they are
/// converted to the camera-to-world convention here and the whole
/// reconstruction is re-anchored so frame 0 is the identity.
pub fn parse_bal<R: BufRead>(reader: R) -> Result<(ViewGraph2D, GroundTruth)> {
    let mut tokens = TokenStream::new(reader);

    let n = tokens.next_usize("header N")?;
    let m = tokens.next_usize("header M")?;
    let k = tokens.next_usize("header K")?;
    if n == 0 || m == 0 {
        return Err(SbaError::Parse("malformed header: N and M must be positive".into()));
    }

    let mut raw_obs = Vec::with_capacity(k);
    for obs_idx in 0..k {
        let cam = tokens
            .next_usize(&format!("observation {obs_idx} camera index"))
            .map_err(|_| SbaError::Parse("observation count mismatch".into()))?;
        let pt = tokens.next_usize(&format!("observation {obs_idx} point index"))?;
        let x = tokens.next_f64(&format!("observation {obs_idx} x"))?;
        let y = tokens.next_f64(&format!("observation {obs_idx} y"))?;
        if cam >= n || pt >= m {
            return Err(SbaError::Parse(format!(
                "index out of range in observation {obs_idx}: camera {cam}, point {pt}"
            )));
        }
        raw_obs.push((cam, pt, Vector2::new(x, y)));
    }

    let mut rotations = Vec::with_capacity(n);
    let mut translations = Vec::with_capacity(n);
    for cam in 0..n {
        let mut vals = [0.0; 9];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = tokens.next_f64(&format!("camera {cam} parameter {j}"))?;
        }
        let axis_angle = Vector3::new(vals[0], vals[1], vals[2]);
        let t_wc = Vector3::new(vals[3], vals[4], vals[5]);
        let r_wc = rotation_from_axis_angle(&axis_angle);
        // world-to-camera (R, t) to camera-to-world (R^T, -R^T t)
        rotations.push(r_wc.transpose());
        translations.push(-r_wc.transpose() * t_wc);
    }

    let mut points = Vec::with_capacity(m);
    for pt in 0..m {
        let x = tokens.next_f64(&format!("point {pt} x"))?;
        let y = tokens.next_f64(&format!("point {pt} y"))?;
        let z = tokens.next_f64(&format!("point {pt} z"))?;
        points.push(Vector3::new(x, y, z));
    }

    // Re-anchor frame 0 to the identity.
    let r0 = rotations[0];
    let t0 = translations[0];
    for i in 0..n {
        let r = r0.transpose() * rotations[i];
        rotations[i] = r;
        translations[i] = r0.transpose() * (translations[i] - t0);
    }
    rotations[0] = Matrix3::identity();
    translations[0] = Vector3::zeros();
    for p in points.iter_mut() {
        *p = r0.transpose() * (*p - t0);
    }

    // Drop duplicate (frame, landmark) pairs, keeping the first.
    let mut seen = HashSet::new();
    let mut duplicates_dropped = 0usize;
    let mut observations = Vec::with_capacity(raw_obs.len());
    for (cam, pt, u) in raw_obs {
        if seen.insert((cam, pt)) {
            observations.push(Observation2D {
                frame: cam,
                landmark: pt,
                keypoint: Keypoint2D { u },
            });
        } else {
            duplicates_dropped += 1;
        }
    }

    // Remove never-observed landmarks with index compaction.
    let mut observed = vec![false; m];
    for o in &observations {
        observed[o.landmark] = true;
    }
    let mut remap = vec![usize::MAX; m];
    let mut kept_points = Vec::new();
    for (idx, p) in points.into_iter().enumerate() {
        if observed[idx] {
            remap[idx] = kept_points.len();
            kept_points.push(p);
        }
    }
    let unobserved_removed = m - kept_points.len();
    for o in observations.iter_mut() {
        o.landmark = remap[o.landmark];
    }

    let graph = ViewGraph2D {
        num_frames: n,
        num_landmarks: kept_points.len(),
        observations,
        duplicates_dropped,
        unobserved_removed,
    };
    let gt = GroundTruth {
        rotations,
        translations,
        scales: vec![1.0; n],
        points: kept_points,
    };
    Ok((graph, gt))
}

/// Rodrigues formula.
fn rotation_from_axis_angle(aa: &Vector3<f64>) -> Matrix3<f64> {
    let theta = aa.norm();
    if theta < 1e-14 {
        return Matrix3::identity();
    }
    let k = aa / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + theta.sin() * kx + (1.0 - theta.cos()) * (kx * kx)
}

struct TokenStream<R: BufRead> {
    reader: R,
    buf: Vec<String>,
    pos: usize,
}

impl<R: BufRead> TokenStream<R> {
    fn new(reader: R) -> Self {
        Self { reader, buf: Vec::new(), pos: 0 }
    }

    fn next_token(&mut self, what: &str) -> Result<String> {
        while self.pos >= self.buf.len() {
            let mut line = String::new();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(SbaError::Parse(format!("unexpected end of file reading {what}")));
            }
            self.buf = line.split_whitespace().map(str::to_owned).collect();
            self.pos = 0;
        }
        let tok = self.buf[self.pos].clone();
        self.pos += 1;
        Ok(tok)
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let tok = self.next_token(what)?;
        tok.parse()
            .map_err(|_| SbaError::Parse(format!("invalid integer for {what}: {tok:?}")))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        let tok = self.next_token(what)?;
        let v: f64 = tok
            .parse()
            .map_err(|_| SbaError::Parse(format!("invalid number for {what}: {tok:?}")))?;
        if !v.is_finite() {
            return Err(SbaError::Parse(format!("non-finite value for {what}")));
        }
        Ok(v)
    }
}

// -------------------------------------------------------------------------
// Depth lifting
// -------------------------------------------------------------------------

/// Lifts every 2D observation to a 3D keypoint, `point = d * [u; 1]`.
///
/// `weights` defaults each observation to weight 1 when absent.
pub fn lift_to_3d(
    graph2d: &ViewGraph2D,
    depths: &HashMap<(usize, usize), f64>,
    weights: Option<&HashMap<(usize, usize), f64>>,
) -> Result<ViewGraph> {
    let mut edges = Vec::with_capacity(graph2d.observations.len());
    for o in &graph2d.observations {
        let key = (o.frame, o.landmark);
        let d = *depths.get(&key).ok_or_else(|| {
            SbaError::InvalidParameter(format!(
                "missing depth for observation ({}, {})",
                o.frame, o.landmark
            ))
        })?;
        if !(d > 0.0) {
            return Err(SbaError::InvalidParameter(format!(
                "non-positive depth for observation ({}, {})",
                o.frame, o.landmark
            )));
        }
        let w = weights.and_then(|m| m.get(&key).copied()).unwrap_or(1.0);
        edges.push(Edge {
            frame: o.frame,
            landmark: o.landmark,
            point: d * Vector3::new(o.keypoint.u.x, o.keypoint.u.y, 1.0),
            weight: w,
        });
    }
    Ok(ViewGraph {
        num_frames: graph2d.num_frames,
        num_landmarks: graph2d.num_landmarks,
        edges,
    })
}

/// Ground-truth depths: the z coordinate of each landmark expressed in the
/// observing camera's (scaled) frame. Observations behind the camera are
/// flagged and the returned map simply omits them; the caller drops those
/// observations. Returns the depth map and the dropped-observation count.
pub fn depths_from_ground_truth(
    graph2d: &ViewGraph2D,
    gt: &GroundTruth,
) -> Result<(HashMap<(usize, usize), f64>, usize)> {
    if gt.rotations.len() != graph2d.num_frames || gt.points.len() != graph2d.num_landmarks {
        return Err(SbaError::InvalidParameter(
            "ground truth inconsistent with graph indices".into(),
        ));
    }
    let mut depths = HashMap::with_capacity(graph2d.observations.len());
    let mut dropped = 0usize;
    for o in &graph2d.observations {
        let q = gt.rotations[o.frame].transpose() * (gt.points[o.landmark] - gt.translations[o.frame])
            / gt.scales[o.frame];
        if q.z > 0.0 {
            depths.insert((o.frame, o.landmark), q.z);
        } else {
            dropped += 1;
        }
    }
    Ok((depths, dropped))
}

/// Drops the observations that have no entry in `depths` (e.g. behind-camera
/// points), then lifts. Landmarks losing all observations are compacted away
/// from both the graph and `gt`.
pub fn lift_with_gt_depths(
    graph2d: &ViewGraph2D,
    gt: &GroundTruth,
) -> Result<(ViewGraph, GroundTruth, usize)> {
    let (depths, dropped) = depths_from_ground_truth(graph2d, gt)?;
    let mut g2 = graph2d.clone();
    g2.observations.retain(|o| depths.contains_key(&(o.frame, o.landmark)));

    let mut observed = vec![false; g2.num_landmarks];
    for o in &g2.observations {
        observed[o.landmark] = true;
    }
    let mut remap = vec![usize::MAX; g2.num_landmarks];
    let mut kept_points = Vec::new();
    for (idx, &obs) in observed.iter().enumerate() {
        if obs {
            remap[idx] = kept_points.len();
            kept_points.push(gt.points[idx]);
        }
    }
    let mut depths2 = HashMap::with_capacity(depths.len());
    for o in g2.observations.iter_mut() {
        let d = depths[&(o.frame, o.landmark)];
        o.landmark = remap[o.landmark];
        depths2.insert((o.frame, o.landmark), d);
    }
    g2.num_landmarks = kept_points.len();

    let gt2 = GroundTruth {
        rotations: gt.rotations.clone(),
        translations: gt.translations.clone(),
        scales: gt.scales.clone(),
        points: kept_points,
    };
    let graph = lift_to_3d(&g2, &depths2, None)?;
    Ok((graph, gt2, dropped))
}

// -------------------------------------------------------------------------
// Connectivity
// -------------------------------------------------------------------------

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Number of connected components of the bipartite frame-landmark graph.
/// Frames and landmarks with no incident edges each count as their own
/// component.
pub fn check_connectivity(graph: &ViewGraph) -> usize {
    let n = graph.num_frames;
    let total = n + graph.num_landmarks;
    let mut uf = UnionFind::new(total);
    let mut comps = total;
    for e in &graph.edges {
        if uf.union(e.frame, n + e.landmark) {
            comps -= 1;
        }
    }
    comps
}

// -------------------------------------------------------------------------
// Synthetic scenes
// -------------------------------------------------------------------------

/// Generates a random connected scene with anchored first frame.
///
/// Landmarks live in a box in front of every camera; each (frame, landmark)
/// pair is observed independently with probability `visibility_prob` and
/// extra edges are added to guarantee coverage and connectivity. Each edge's
/// lifted point is the true camera-frame point scaled by a multiplicative
/// depth-noise factor `(1 + eps)^x` with `x ~ U(-1, 1)`. Deterministic for a
/// fixed seed.
pub fn synth_scene(
    n_frames: usize,
    n_landmarks: usize,
    visibility_prob: f64,
    noise_eps: f64,
    seed: u64,
) -> Result<(ViewGraph, GroundTruth)> {
    if n_frames == 0 {
        return Err(SbaError::InvalidParameter("n_frames must be >= 1".into()));
    }
    if n_landmarks == 0 {
        return Err(SbaError::InvalidParameter(
            "n_landmarks = 0 yields an unconnectable graph".into(),
        ));
    }
    if !(visibility_prob > 0.0 && visibility_prob <= 1.0) {
        return Err(SbaError::InvalidParameter(
            "visibility_prob must be in (0, 1]".into(),
        ));
    }
    if noise_eps < 0.0 {
        return Err(SbaError::InvalidParameter("noise_eps must be >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Vector3::new(0.0, 0.0, 6.0);

    // Landmarks in a box around `center`; every camera placed outside a
    // sphere containing the box and oriented toward its center, so all
    // depths are positive by construction.
    let mut points = Vec::with_capacity(n_landmarks);
    for _ in 0..n_landmarks {
        let p = center
            + Vector3::new(
                rng.gen_range(-2.5..2.5),
                rng.gen_range(-2.5..2.5),
                rng.gen_range(-2.5..2.5),
            );
        points.push(p);
    }

    let mut rotations = vec![Matrix3::identity()];
    let mut translations = vec![Vector3::zeros()];
    let mut scales = vec![1.0];
    for _ in 1..n_frames {
        let dir = loop {
            let v: Vector3<f64> = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let norm = v.norm();
            if norm > 1e-3 {
                break v / norm;
            }
        };
        let radius: f64 = rng.gen_range(5.0..7.0);
        let t = center + radius * dir;
        let forward = (center - t).normalize();
        let r = look_at_with_random_roll(&forward, &mut rng);
        rotations.push(r);
        translations.push(t);
        scales.push(f64::exp(rng.gen_range(-0.4..0.4)));
    }

    let gt = GroundTruth { rotations, translations, scales, points };

    let mut pairs = HashSet::new();
    let mut edge_list: Vec<(usize, usize)> = Vec::new();
    for i in 0..n_frames {
        for k in 0..n_landmarks {
            if rng.gen_range(0.0..1.0) < visibility_prob && pairs.insert((i, k)) {
                edge_list.push((i, k));
            }
        }
    }

    // Coverage: every landmark and every frame needs at least one edge.
    let mut lm_deg = vec![0usize; n_landmarks];
    let mut frame_deg = vec![0usize; n_frames];
    for &(i, k) in &edge_list {
        frame_deg[i] += 1;
        lm_deg[k] += 1;
    }
    for k in 0..n_landmarks {
        if lm_deg[k] == 0 {
            let i = rng.gen_range(0..n_frames);
            if pairs.insert((i, k)) {
                edge_list.push((i, k));
                frame_deg[i] += 1;
                lm_deg[k] += 1;
            }
        }
    }
    for i in 0..n_frames {
        if frame_deg[i] == 0 {
            let k = rng.gen_range(0..n_landmarks);
            if pairs.insert((i, k)) {
                edge_list.push((i, k));
                frame_deg[i] += 1;
                lm_deg[k] += 1;
            }
        }
    }

    // Connectivity: merge stray components into frame 0's component.
    let mut uf = UnionFind::new(n_frames + n_landmarks);
    for &(i, k) in &edge_list {
        uf.union(i, n_frames + k);
    }
    for k in 0..n_landmarks {
        if uf.find(n_frames + k) != uf.find(0) && pairs.insert((0, k)) {
            edge_list.push((0, k));
            uf.union(0, n_frames + k);
        }
    }
    for i in 1..n_frames {
        if uf.find(i) != uf.find(0) {
            // The frame has an edge to some landmark, and all its landmarks
            // were just merged into component 0 unless the frame itself only
            // touches landmarks we could not pair; connect it directly.
            let k = edge_list
                .iter()
                .find(|&&(f, _)| f == i)
                .map(|&(_, k)| k)
                .unwrap_or(0);
            if pairs.insert((0, k)) {
                edge_list.push((0, k));
            }
            uf.union(0, n_frames + k);
            uf.union(i, n_frames + k);
        }
    }

    edge_list.sort_unstable();
    let mut edges = Vec::with_capacity(edge_list.len());
    for (i, k) in edge_list {
        let q = gt.rotations[i].transpose() * (gt.points[k] - gt.translations[i]) / gt.scales[i];
        debug_assert!(q.z > 0.0);
        let factor = if noise_eps > 0.0 {
            (1.0 + noise_eps).powf(rng.gen_range(-1.0..1.0))
        } else {
            1.0
        };
        edges.push(Edge { frame: i, landmark: k, point: factor * q, weight: 1.0 });
    }

    let graph = ViewGraph { num_frames: n_frames, num_landmarks: n_landmarks, edges };
    graph.validate()?;
    gt.validate()?;
    Ok((graph, gt))
}

fn look_at_with_random_roll(forward: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let seed_axis = loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let c = v.cross(forward);
        if c.norm() > 1e-3 {
            break c.normalize();
        }
    };
    let x = seed_axis;
    let y = forward.cross(&x);
    Matrix3::from_columns(&[x, y, *forward])
}

// -------------------------------------------------------------------------
// Native JSON interchange format
// -------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    frame: usize,
    landmark: usize,
    point: [f64; 3],
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct ViewGraphJson {
    num_frames: usize,
    num_landmarks: usize,
    edges: Vec<EdgeJson>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthJson {
    rotations: Vec<[f64; 9]>,
    translations: Vec<[f64; 3]>,
    scales: Vec<f64>,
    points: Vec<[f64; 3]>,
}

impl ViewGraph {
    pub fn to_json(&self) -> String {
        let j = ViewGraphJson {
            num_frames: self.num_frames,
            num_landmarks: self.num_landmarks,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    frame: e.frame,
                    landmark: e.landmark,
                    point: [e.point.x, e.point.y, e.point.z],
                    weight: e.weight,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&j).expect("view graph serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ViewGraphJson = serde_json::from_str(text)?;
        let graph = ViewGraph {
            num_frames: j.num_frames,
            num_landmarks: j.num_landmarks,
            edges: j
                .edges
                .into_iter()
                .map(|e| Edge {
                    frame: e.frame,
                    landmark: e.landmark,
                    point: Vector3::new(e.point[0], e.point[1], e.point[2]),
                    weight: e.weight,
                })
                .collect(),
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json().as_bytes())?;
        Ok(())
    }
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        let j = GroundTruthJson {
            rotations: self
                .rotations
                .iter()
                .map(|r| {
                    let mut a = [0.0; 9];
                    for (idx, v) in r.transpose().iter().enumerate() {
                        a[idx] = *v; // row-major
                    }
                    a
                })
                .collect(),
            translations: self.translations.iter().map(|t| [t.x, t.y, t.z]).collect(),
            scales: self.scales.clone(),
            points: self.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        serde_json::to_string_pretty(&j).expect("ground truth serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: GroundTruthJson = serde_json::from_str(text)?;
        let gt = GroundTruth {
            rotations: j
                .rotations
                .iter()
                .map(|a| Matrix3::from_row_slice(a))
                .collect(),
            translations: j
                .translations
                .iter()
                .map(|a| Vector3::new(a[0], a[1], a[2]))
                .collect(),
            scales: j.scales,
            points: j.points.iter().map(|a| Vector3::new(a[0], a[1], a[2])).collect(),
        };
        gt.validate()?;
        Ok(gt)
    }
}
