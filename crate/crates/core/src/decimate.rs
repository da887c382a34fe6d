//! Symmetric, expression-averaged quadric edge-collapse decimation.
//!
//! Collapses use subset placement: the surviving vertex keeps its position,
//! so the identity and blendshape bases of kept vertices carry over exactly.
//! A collapse of a non-midline edge is always executed together with its
//! mirror image; midline edges collapse alone. Eyeball vertices never
//! collapse.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use nalgebra::{Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemodel::{ContourSet, FaceModel, LandmarkEmbedding, Polyline};

/// Symmetric 4x4 form stored as its upper triangle:
/// `[a00, a01, a02, a03, a11, a12, a13, a22, a23, a33]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quadric(pub [f64; 10]);

impl Quadric {
    /// Squared distance form of the plane `n . x + d = 0` (unit `n`), scaled.
    pub fn from_plane(n: Vector3<f64>, d: f64, weight: f64) -> Self {
        let p = [n.x, n.y, n.z, d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = weight * p[i] * p[j];
                k += 1;
            }
        }
        Quadric(q)
    }

    pub fn add(&mut self, other: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> Quadric {
        Quadric(self.0.map(|v| v * s))
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let q = &self.0;
        Matrix4::new(
            q[0], q[1], q[2], q[3], q[1], q[4], q[5], q[6], q[2], q[5], q[7], q[8], q[3], q[6],
            q[8], q[9],
        )
    }

    /// `[x, 1]^T Q [x, 1]`.
    #[inline]
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let q = &self.0;
        let (a, b, c) = (x.x, x.y, x.z);
        q[0] * a * a
            + 2.0 * q[1] * a * b
            + 2.0 * q[2] * a * c
            + 2.0 * q[3] * a
            + q[4] * b * b
            + 2.0 * q[5] * b * c
            + 2.0 * q[6] * b
            + q[7] * c * c
            + 2.0 * q[8] * c
            + q[9]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecimationConfig {
    /// Weight of the planes that hold open boundary edges in place.
    pub boundary_weight: f64,
    /// Smallest allowed cosine between a triangle normal before and after
    /// a collapse.
    pub min_normal_cos: f64,
}

impl Default for DecimationConfig {
    fn default() -> Self {
        Self {
            boundary_weight: 100.0,
            min_normal_cos: 0.1,
        }
    }
}

fn positions(model: &FaceModel, beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
    let alpha = vec![0.0; model.n_identity()];
    model.evaluate_linear(&alpha, beta)
}

/// Per-vertex plane quadrics of one mesh, plus boundary planes.
pub fn mesh_quadrics(
    verts: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    boundary_weight: f64,
) -> Vec<Quadric> {
    let mut q = vec![Quadric::default(); verts.len()];
    let mut edge_count: std::collections::HashMap<(u32, u32), (u32, usize)> =
        std::collections::HashMap::new();
    for (ti, t) in triangles.iter().enumerate() {
        let (a, b, c) = (
            verts[t[0] as usize],
            verts[t[1] as usize],
            verts[t[2] as usize],
        );
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            let n = n / len;
            let plane = Quadric::from_plane(n, -n.dot(&a), 1.0);
            for &v in t {
                q[v as usize].add(&plane);
            }
        }
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            let key = (u.min(v), u.max(v));
            let e = edge_count.entry(key).or_insert((0, ti));
            e.0 += 1;
        }
    }
    if boundary_weight > 0.0 {
        let mut boundary: Vec<((u32, u32), usize)> = edge_count
            .into_iter()
            .filter(|(_, (c, _))| *c == 1)
            .map(|(k, (_, t))| (k, t))
            .collect();
        boundary.sort_unstable();
        for ((u, v), ti) in boundary {
            let t = triangles[ti];
            let (a, b, c) = (
                verts[t[0] as usize],
                verts[t[1] as usize],
                verts[t[2] as usize],
            );
            let fn_ = (b - a).cross(&(c - a));
            let (pu, pv) = (verts[u as usize], verts[v as usize]);
            let e = pv - pu;
            let n = e.cross(&fn_);
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            let n = n / len;
            let plane = Quadric::from_plane(n, -n.dot(&pu), boundary_weight * e.norm_squared());
            q[u as usize].add(&plane);
            q[v as usize].add(&plane);
        }
    }
    q
}

/// Uniform expression samples in `[0, 1]^n`, identity held at zero.
pub fn sample_expressions(n_blendshapes: usize, n_expr: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_expr)
        .map(|_| (0..n_blendshapes).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Per-vertex quadrics and positions of every sampled expression. The cost
/// of keeping `v` in place of `u` is the mean over expressions of
/// `(Q_u,e + Q_v,e)(x_v,e)`, each expression measured on its own geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionQuadrics {
    pub per_expression: Vec<Vec<Quadric>>,
    pub positions: Vec<Vec<Vector3<f64>>>,
}

impl ExpressionQuadrics {
    /// Classical single-mesh quadrics.
    pub fn single(quadrics: Vec<Quadric>, positions: Vec<Vector3<f64>>) -> Self {
        Self {
            per_expression: vec![quadrics],
            positions: vec![positions],
        }
    }

    pub fn n_expressions(&self) -> usize {
        self.per_expression.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.per_expression.first().map_or(0, |q| q.len())
    }

    /// Arithmetic mean of the per-vertex quadrics over the expressions.
    pub fn mean(&self) -> Vec<Quadric> {
        let inv = 1.0 / self.n_expressions().max(1) as f64;
        let mut out = vec![Quadric::default(); self.n_vertices()];
        for qs in &self.per_expression {
            for (o, q) in out.iter_mut().zip(qs) {
                o.add(q);
            }
        }
        out.into_iter().map(|q| q.scaled(inv)).collect()
    }
}

pub fn expression_quadrics_for(
    model: &FaceModel,
    betas: &[Vec<f64>],
    cfg: &DecimationConfig,
) -> Result<ExpressionQuadrics> {
    if betas.is_empty() {
        return Err(Error::InvalidInput("at least one expression is required".into()));
    }
    let per: Vec<(Vec<Quadric>, Vec<Vector3<f64>>)> = betas
        .par_iter()
        .map(|b| {
            positions(model, b)
                .map(|v| (mesh_quadrics(&v, &model.triangles, cfg.boundary_weight), v))
        })
        .collect::<Result<_>>()?;
    let (per_expression, positions) = per.into_iter().unzip();
    Ok(ExpressionQuadrics {
        per_expression,
        positions,
    })
}

pub fn expression_quadrics(
    model: &FaceModel,
    n_expr: usize,
    seed: u64,
    cfg: &DecimationConfig,
) -> Result<ExpressionQuadrics> {
    if n_expr == 0 {
        return Err(Error::InvalidInput("n_expr must be at least 1".into()));
    }
    let betas = sample_expressions(model.n_blendshapes(), n_expr, seed);
    expression_quadrics_for(model, &betas, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub kept: u32,
    pub removed: u32,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecimationPlan {
    /// Executed collapses in order; mirrored pairs are adjacent.
    pub collapses: Vec<Collapse>,
    /// Group index of each collapse (mirrored pairs share one).
    pub groups: Vec<usize>,
    /// Old vertex index to new index of its surviving representative.
    pub remap: Vec<u32>,
    /// Old indices of the kept vertices, in new order.
    pub kept: Vec<u32>,
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub target_vertices: usize,
    pub reached_target: bool,
}

/// Mutable triangle soup with vertex-to-triangle adjacency and undo log.
struct Mesh<'a> {
    pos: &'a [Vector3<f64>],
    tris: Vec<[u32; 3]>,
    tri_alive: Vec<bool>,
    vtris: Vec<Vec<u32>>,
    alive: Vec<bool>,
    collapsible: Vec<bool>,
}

struct Undo {
    removed: u32,
    kept: u32,
    kept_len: usize,
    changed: Vec<(u32, [u32; 3], bool)>,
}

impl<'a> Mesh<'a> {
    fn new(pos: &'a [Vector3<f64>], tris: &[[u32; 3]], collapsible: Vec<bool>) -> Self {
        let mut vtris = vec![Vec::new(); pos.len()];
        for (i, t) in tris.iter().enumerate() {
            for &v in t {
                vtris[v as usize].push(i as u32);
            }
        }
        Self {
            pos,
            tris: tris.to_vec(),
            tri_alive: vec![true; tris.len()],
            vtris,
            alive: vec![true; pos.len()],
            collapsible,
        }
    }

    fn live_tris(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        self.vtris[v as usize]
            .iter()
            .copied()
            .filter(|&t| self.tri_alive[t as usize])
    }

    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> = self
            .live_tris(v)
            .flat_map(|t| self.tris[t as usize])
            .filter(|&w| w != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    /// Third vertices of the live triangles on edge `uv`.
    fn edge_opposites(&self, u: u32, v: u32) -> Vec<u32> {
        let mut o: Vec<u32> = self
            .live_tris(u)
            .filter_map(|t| {
                let tri = self.tris[t as usize];
                tri.contains(&v)
                    .then(|| *tri.iter().find(|&&w| w != u && w != v).unwrap())
            })
            .collect();
        o.sort_unstable();
        o
    }

    fn is_boundary_vertex(&self, v: u32) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|w| self.edge_opposites(v, w).len() == 1)
    }

    fn valid(&self, u: u32, v: u32, min_cos: f64) -> bool {
        if u == v
            || !self.alive[u as usize]
            || !self.alive[v as usize]
            || !self.collapsible[u as usize]
            || !self.collapsible[v as usize]
        {
            return false;
        }
        let opp = self.edge_opposites(u, v);
        if opp.is_empty() || opp.len() > 2 {
            return false;
        }
        let nu = self.neighbors(u);
        let nv = self.neighbors(v);
        let common: Vec<u32> = nu.iter().copied().filter(|w| nv.binary_search(w).is_ok()).collect();
        if common != opp {
            return false;
        }
        if opp.len() == 2 && self.is_boundary_vertex(u) && self.is_boundary_vertex(v) {
            return false;
        }
        // a closed fan of three would fold into a doubled triangle
        if nu.len() <= 2 || (opp.len() == 2 && nu.len() == 3 && nv.len() == 3) {
            return false;
        }
        for t in self.live_tris(u) {
            let tri = self.tris[t as usize];
            if tri.contains(&v) {
                continue;
            }
            let p = tri.map(|w| self.pos[w as usize]);
            let q = tri.map(|w| self.pos[if w == u { v } else { w } as usize]);
            let n0 = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let n1 = (q[1] - q[0]).cross(&(q[2] - q[0]));
            let (l0, l1) = (n0.norm(), n1.norm());
            if l1 <= 1e-12 * l0.max(1e-300) || l0 == 0.0 {
                return false;
            }
            if n0.dot(&n1) / (l0 * l1) < min_cos {
                return false;
            }
        }
        true
    }

    fn apply(&mut self, u: u32, v: u32) -> Undo {
        let mut undo = Undo {
            removed: u,
            kept: v,
            kept_len: self.vtris[v as usize].len(),
            changed: Vec::new(),
        };
        let ts: Vec<u32> = self.live_tris(u).collect();
        for t in ts {
            let tri = self.tris[t as usize];
            undo.changed.push((t, tri, true));
            if tri.contains(&v) {
                self.tri_alive[t as usize] = false;
            } else {
                self.tris[t as usize] = tri.map(|w| if w == u { v } else { w });
                self.vtris[v as usize].push(t);
            }
        }
        self.alive[u as usize] = false;
        undo
    }

    fn revert(&mut self, undo: Undo) {
        for (t, tri, alive) in undo.changed.into_iter().rev() {
            self.tris[t as usize] = tri;
            self.tri_alive[t as usize] = alive;
        }
        self.vtris[undo.kept as usize].truncate(undo.kept_len);
        self.alive[undo.removed as usize] = true;
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    cost: f64,
    members: Vec<(u32, u32)>,
    stamps: Vec<(u32, u64)>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // reversed: BinaryHeap pops the cheapest, ties by member indices
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.members.cmp(&self.members))
    }
}

struct Decimator<'a> {
    mesh: Mesh<'a>,
    /// Vertex-major: `[v * n_expr + e]`.
    quadrics: Vec<Quadric>,
    expr_pos: Vec<Vector3<f64>>,
    n_expr: usize,
    symmetry: &'a [u32],
    version: Vec<u64>,
    heap: BinaryHeap<Candidate>,
    min_cos: f64,
}

impl<'a> Decimator<'a> {
    fn member_cost(&self, u: u32, v: u32) -> f64 {
        let e = self.n_expr;
        let (ou, ov) = (u as usize * e, v as usize * e);
        let mut total = 0.0;
        for k in 0..e {
            let mut q = self.quadrics[ou + k];
            q.add(&self.quadrics[ov + k]);
            total += q.eval(&self.expr_pos[ov + k]);
        }
        total / e as f64
    }

    fn accumulate(&mut self, u: u32, v: u32) {
        let e = self.n_expr;
        for k in 0..e {
            let q = self.quadrics[u as usize * e + k];
            self.quadrics[v as usize * e + k].add(&q);
        }
    }

    /// Symmetric group for keeping `v` and removing `u`, if allowed.
    fn group(&self, u: u32, v: u32) -> Option<Vec<(u32, u32)>> {
        let (su, sv) = (self.symmetry[u as usize], self.symmetry[v as usize]);
        let u_mid = su == u;
        let v_mid = sv == v;
        match (u_mid, v_mid) {
            (true, true) => Some(vec![(u, v)]),
            (true, false) => None,
            (false, true) => Some(vec![(u, v), (su, v)]),
            (false, false) => {
                if su == v {
                    None
                } else {
                    Some(vec![(u, v), (su, sv)])
                }
            }
        }
    }

    fn candidate(&self, members: Vec<(u32, u32)>) -> Candidate {
        let cost = members
            .iter()
            .map(|&(u, v)| self.member_cost(u, v))
            .sum::<f64>()
            / members.len() as f64;
        let mut verts: Vec<u32> = members.iter().flat_map(|&(u, v)| [u, v]).collect();
        verts.sort_unstable();
        verts.dedup();
        Candidate {
            cost,
            stamps: verts.iter().map(|&w| (w, self.version[w as usize])).collect(),
            members,
        }
    }

    fn push_edges_of(&mut self, a: u32) {
        if !self.mesh.alive[a as usize] || !self.mesh.collapsible[a as usize] {
            return;
        }
        for b in self.mesh.neighbors(a) {
            if !self.mesh.collapsible[b as usize] {
                continue;
            }
            for (u, v) in [(a, b), (b, a)] {
                if let Some(g) = self.group(u, v) {
                    let c = self.candidate(g);
                    self.heap.push(c);
                }
            }
        }
    }

    fn fresh(&self, c: &Candidate) -> bool {
        c.stamps
            .iter()
            .all(|&(w, s)| self.mesh.alive[w as usize] && self.version[w as usize] == s)
    }

    /// Applies every member or none of them.
    fn try_group(&mut self, members: &[(u32, u32)]) -> bool {
        let mut undos = Vec::new();
        for &(u, v) in members {
            if !self.mesh.valid(u, v, self.min_cos) {
                for undo in undos.into_iter().rev() {
                    self.mesh.revert(undo);
                }
                return false;
            }
            undos.push(self.mesh.apply(u, v));
        }
        true
    }

    fn touch(&mut self, members: &[(u32, u32)]) {
        let mut ring: HashSet<u32> = HashSet::new();
        for &(_, v) in members {
            ring.insert(v);
            ring.extend(self.mesh.neighbors(v));
        }
        let mut ring: Vec<u32> = ring.into_iter().collect();
        ring.sort_unstable();
        for &w in &ring {
            self.version[w as usize] += 1;
        }
        for &w in &ring {
            self.push_edges_of(w);
        }
    }
}

fn chain_root(rep: &[u32], mut v: u32) -> u32 {
    while rep[v as usize] != v {
        v = rep[v as usize];
    }
    v
}

/// Greedy symmetric decimation to `target_vertices` total vertices.
pub fn decimate_symmetric(
    model: &FaceModel,
    quadrics: &ExpressionQuadrics,
    target_vertices: usize,
    cfg: &DecimationConfig,
) -> Result<(FaceModel, DecimationPlan)> {
    model.validate()?;
    let n = model.n_vertices();
    if quadrics.n_vertices() != n || quadrics.positions.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension {
            what: "quadrics",
            expected: n,
            got: quadrics.n_vertices(),
        });
    }
    let n_expr = quadrics.n_expressions();
    let mut flat_q = vec![Quadric::default(); n * n_expr];
    let mut flat_p = vec![Vector3::zeros(); n * n_expr];
    for (k, (qs, ps)) in quadrics.per_expression.iter().zip(&quadrics.positions).enumerate() {
        for v in 0..n {
            flat_q[v * n_expr + k] = qs[v];
            flat_p[v * n_expr + k] = ps[v];
        }
    }
    if target_vertices > n {
        return Err(Error::InvalidInput(format!(
            "target {target_vertices} exceeds the current {n} vertices"
        )));
    }
    let pos = model.mean_positions();
    let collapsible: Vec<bool> = (0..n).map(|v| model.eye_of(v).is_none()).collect();
    let mut d = Decimator {
        mesh: Mesh::new(&pos, &model.triangles, collapsible),
        quadrics: flat_q,
        expr_pos: flat_p,
        n_expr,
        symmetry: &model.symmetry,
        version: vec![0; n],
        heap: BinaryHeap::new(),
        min_cos: cfg.min_normal_cos,
    };
    for a in 0..n as u32 {
        d.push_edges_of(a);
    }
    let mut rep: Vec<u32> = (0..n as u32).collect();
    let mut collapses = Vec::new();
    let mut groups = Vec::new();
    let mut n_alive = n;
    let mut group_id = 0;
    while n_alive > target_vertices {
        let need = n_alive - target_vertices;
        let Some(c) = d.heap.pop() else { break };
        if !d.fresh(&c) || c.members.len() > need {
            continue;
        }
        if !d.try_group(&c.members) {
            continue;
        }
        for &(u, v) in &c.members {
            let cost = d.member_cost(u, v);
            d.accumulate(u, v);
            rep[u as usize] = v;
            collapses.push(Collapse {
                kept: v,
                removed: u,
                cost,
            });
            groups.push(group_id);
            n_alive -= 1;
        }
        group_id += 1;
        d.touch(&c.members);
    }
    let mesh = d.mesh;
    let kept: Vec<u32> = (0..n as u32).filter(|&v| mesh.alive[v as usize]).collect();
    let mut new_index = vec![u32::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v as usize] = i as u32;
    }
    let remap: Vec<u32> = (0..n as u32)
        .map(|v| new_index[chain_root(&rep, v) as usize])
        .collect();
    let triangles: Vec<[u32; 3]> = mesh
        .tris
        .iter()
        .zip(&mesh.tri_alive)
        .filter(|(_, &a)| a)
        .map(|(t, _)| t.map(|v| new_index[v as usize]))
        .collect();
    let plan = DecimationPlan {
        collapses,
        groups,
        remap,
        n_vertices: kept.len(),
        n_triangles: triangles.len(),
        target_vertices,
        reached_target: kept.len() == target_vertices,
        kept,
    };
    let out = apply_plan_with_triangles(model, &plan, triangles)?;
    Ok((out, plan))
}

/// Rebuilds a decimated model from a plan computed on `model`.
pub fn apply_plan(model: &FaceModel, plan: &DecimationPlan) -> Result<FaceModel> {
    let mut seen = HashSet::new();
    let triangles: Vec<[u32; 3]> = model
        .triangles
        .iter()
        .map(|t| t.map(|v| plan.remap[v as usize]))
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .filter(|t| {
            let mut k = *t;
            k.sort_unstable();
            seen.insert(k)
        })
        .collect();
    apply_plan_with_triangles(model, plan, triangles)
}

fn apply_plan_with_triangles(
    model: &FaceModel,
    plan: &DecimationPlan,
    triangles: Vec<[u32; 3]>,
) -> Result<FaceModel> {
    let kept: Vec<usize> = plan.kept.iter().map(|&v| v as usize).collect();
    let n_old = model.n_vertices();
    if plan.remap.len() != n_old {
        return Err(Error::Dimension {
            what: "plan remap",
            expected: n_old,
            got: plan.remap.len(),
        });
    }
    let mean: Vec<[f32; 3]> = kept.iter().map(|&v| model.mean[v]).collect();
    let symmetry: Vec<u32> = kept
        .iter()
        .map(|&v| plan.remap[model.symmetry[v] as usize])
        .collect();
    let mut eyeballs = model.eyeballs;
    for e in &mut eyeballs {
        if e.is_empty() {
            continue;
        }
        e.start = plan.remap[e.start as usize];
        e.end = plan.remap[e.end as usize - 1] + 1;
    }
    let remap_line = |line: &[u32]| -> Vec<u32> {
        let mut out: Vec<u32> = Vec::with_capacity(line.len());
        for &v in line {
            let r = plan.remap[v as usize];
            if out.last() != Some(&r) {
                out.push(r);
            }
        }
        out
    };
    let closed_line = |line: &[u32]| {
        let mut out = remap_line(line);
        if out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        out
    };
    let contours = ContourSet {
        strokes: model
            .contours
            .strokes
            .iter()
            .map(|p| Polyline {
                vertices: if p.closed {
                    closed_line(&p.vertices)
                } else {
                    remap_line(&p.vertices)
                },
                closed: p.closed,
            })
            .collect(),
        jawline: remap_line(&model.contours.jawline),
        inner_lip: closed_line(&model.contours.inner_lip),
    };
    let mut out = FaceModel {
        mean,
        triangles,
        identity: model.identity.restrict(&kept),
        blendshapes: model.blendshapes.restrict(&kept),
        blendshape_names: model.blendshape_names.clone(),
        eyeballs,
        iris_rings: model
            .iris_rings
            .clone()
            .map(|r| r.iter().map(|&v| plan.remap[v as usize]).collect()),
        symmetry,
        landmarks: Vec::new(),
        contours,
    };
    out.landmarks = reembed_landmarks(model, &out, plan);
    out.validate()?;
    Ok(out)
}

/// Closest point on triangle `abc` to `p`, as barycentric weights.
pub fn closest_point_barycentric(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// Landmarks whose triangle survives keep their weights; the rest move to
/// the closest point of the decimated surface on the same part (face or the
/// same eyeball), measured on the mean shape.
fn reembed_landmarks(
    old: &FaceModel,
    new: &FaceModel,
    plan: &DecimationPlan,
) -> Vec<LandmarkEmbedding> {
    let old_pos = old.mean_positions();
    let new_pos = new.mean_positions();
    let part = |m: &FaceModel, v: u32| m.eye_of(v as usize).map(|s| s.index() + 1).unwrap_or(0);
    let mut index: std::collections::HashMap<[u32; 3], usize> = std::collections::HashMap::new();
    for (i, t) in new.triangles.iter().enumerate() {
        index.insert(*t, i);
    }
    old.landmarks
        .iter()
        .map(|l| {
            let t = old.triangles[l.triangle as usize];
            let mapped = t.map(|v| plan.remap[v as usize]);
            let same = t.iter().all(|&v| plan.kept[plan.remap[v as usize] as usize] == v);
            if same {
                if let Some(&ti) = index.get(&mapped) {
                    return LandmarkEmbedding {
                        triangle: ti as u32,
                        weights: l.weights,
                    };
                }
            }
            let p = (0..3).fold(Vector3::zeros(), |acc, k| {
                acc + old_pos[t[k] as usize] * l.weights[k]
            });
            let region = part(old, t[0]);
            let mut best = (f64::INFINITY, LandmarkEmbedding {
                triangle: 0,
                weights: [1.0, 0.0, 0.0],
            });
            for (ti, nt) in new.triangles.iter().enumerate() {
                if part(new, nt[0]) != region {
                    continue;
                }
                let [a, b, c] = nt.map(|v| new_pos[v as usize]);
                let w = closest_point_barycentric(&p, &a, &b, &c);
                let q = a * w[0] + b * w[1] + c * w[2];
                let d = (q - p).norm_squared();
                if d < best.0 {
                    best = (
                        d,
                        LandmarkEmbedding {
                            triangle: ti as u32,
                            weights: w,
                        },
                    );
                }
            }
            best.1
        })
        .collect()
}

/// Total quadric error of a plan re-evaluated on the given expressions:
/// the mean over expressions of `sum_v Q_v(x_rep(v))`, each original
/// vertex measured at its representative's position in that expression.
pub fn reevaluated_error(
    model: &FaceModel,
    plan: &DecimationPlan,
    betas: &[Vec<f64>],
    cfg: &DecimationConfig,
) -> Result<f64> {
    let total: f64 = betas
        .par_iter()
        .map(|b| -> Result<f64> {
            let v = positions(model, b)?;
            let q = mesh_quadrics(&v, &model.triangles, cfg.boundary_weight);
            Ok((0..v.len())
                .map(|i| {
                    let r = plan.kept[plan.remap[i] as usize] as usize;
                    q[i].eval(&v[r])
                })
                .sum())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / betas.len().max(1) as f64)
}

/// Each undirected edge appears in at most two triangles and no triangle
/// repeats a vertex or duplicates another.
pub fn is_manifold_consistent(triangles: &[[u32; 3]]) -> bool {
    let mut edges: std::collections::HashMap<(u32, u32), u32> = std::collections::HashMap::new();
    let mut seen = HashSet::new();
    for t in triangles {
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return false;
        }
        let mut k = *t;
        k.sort_unstable();
        if !seen.insert(k) {
            return false;
        }
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    edges.values().all(|&c| c <= 2)
}

/// Largest distance between a vertex of the mesh and the mirror image of
/// its symmetry partner.
pub fn symmetry_error(model: &FaceModel) -> f64 {
    model
        .mean
        .iter()
        .zip(&model.symmetry)
        .map(|(p, &j)| {
            let q = model.mean[j as usize];
            let d = Vector3::new(
                (p[0] + q[0]) as f64,
                (p[1] - q[1]) as f64,
                (p[2] - q[2]) as f64,
            );
            d.norm()
        })
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a quadric, for positive-semidefiniteness checks.
pub fn min_eigenvalue(q: &Quadric) -> f64 {
    q.matrix().symmetric_eigenvalues().min()
}

pub fn homogeneous(x: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(x.x, x.y, x.z, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticHead, SyntheticHeadConfig};

    #[test]
    fn quadric_eval_matches_matrix_form() {
        let q = Quadric::from_plane(Vector3::new(0.6, 0.0, 0.8), -0.3, 2.0);
        let x = Vector3::new(0.4, -1.2, 0.9);
        let h = homogeneous(&x);
        assert!((q.eval(&x) - (h.transpose() * q.matrix() * h)[0]).abs() < 1e-12);
        let dist = 0.6 * 0.4 + 0.8 * 0.9 - 0.3;
        assert!((q.eval(&x) - 2.0 * dist * dist).abs() < 1e-12);
    }

    #[test]
    fn target_equal_to_count_is_identity() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        let cfg = DecimationConfig::default();
        let q = expression_quadrics(&h.model, 2, 1, &cfg).unwrap();
        let (m, plan) = decimate_symmetric(&h.model, &q, h.model.n_vertices(), &cfg).unwrap();
        assert!(plan.collapses.is_empty());
        assert_eq!(m.mean, h.model.mean);
        assert_eq!(m.triangles, h.model.triangles);
        assert_eq!(m.landmarks, h.model.landmarks);
    }

    #[test]
    fn zero_expressions_rejected() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        assert!(expression_quadrics(&h.model, 0, 1, &DecimationConfig::default()).is_err());
    }

    #[test]
    fn closest_point_inside_and_outside() {
        let (a, b, c) = (
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let w = closest_point_barycentric(&Vector3::new(0.25, 0.25, 3.0), &a, &b, &c);
        assert!((w[1] - 0.25).abs() < 1e-12 && (w[2] - 0.25).abs() < 1e-12);
        let w = closest_point_barycentric(&Vector3::new(2.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(w, [0.0, 1.0, 0.0]);
    }
}
