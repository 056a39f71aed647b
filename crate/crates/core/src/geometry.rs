//! Domain catalog and mesh generation.
//!
//! Every domain is rescaled to unit measure by coordinate dilation after
//! meshing, so the unit-mass constraint and the measure normalization used
//! throughout the solvers hold exactly on the discrete level.
//!
//! Resolution semantics: for the disk, `resolution / 2` concentric rings
//! (about `resolution` nodes across a diameter); for rectangles,
//! `resolution` cells across the width; for polygons, uniform refinement of
//! an ear-clipped triangulation until edges are about `diameter/resolution`;
//! for the radial 3-ball, `resolution` radial intervals.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

static MESH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Disk,
    Rectangle {
        aspect: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
    Ball3d,
    PerturbedDisk {
        amplitude: f64,
        modes: Vec<u32>,
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub kind: DomainKind,
    #[serde(default = "default_measure")]
    pub target_measure: f64,
}

fn default_measure() -> f64 {
    1.0
}

impl DomainSpec {
    pub fn new(kind: DomainKind) -> Self {
        DomainSpec {
            kind,
            target_measure: 1.0,
        }
    }

    pub fn disk() -> Self {
        Self::new(DomainKind::Disk)
    }

    pub fn square() -> Self {
        Self::new(DomainKind::Rectangle { aspect: 1.0 })
    }

    pub fn ball3d() -> Self {
        Self::new(DomainKind::Ball3d)
    }

    /// Spatial dimension of the underlying domain.
    pub fn dimension(&self) -> usize {
        match self.kind {
            DomainKind::Ball3d => 3,
            _ => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if (self.target_measure - 1.0).abs() > 1e-12 {
            return Err(Error::Usage(format!(
                "target_measure must be 1, got {}",
                self.target_measure
            )));
        }
        match &self.kind {
            DomainKind::Rectangle { aspect } => {
                if !aspect.is_finite() || *aspect <= 0.0 {
                    return Err(Error::Geometry(format!("rectangle aspect {aspect} not positive")));
                }
            }
            DomainKind::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Geometry(format!(
                        "polygon needs at least 3 vertices, got {}",
                        vertices.len()
                    )));
                }
            }
            DomainKind::PerturbedDisk {
                amplitude, modes, ..
            } => {
                if !amplitude.is_finite() || *amplitude < 0.0 {
                    return Err(Error::Geometry(format!("perturbation amplitude {amplitude} invalid")));
                }
                if modes.is_empty() || modes.contains(&0) {
                    return Err(Error::Geometry(
                        "perturbation modes must be nonzero and nonempty".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Planar triangulations and the radial scheme share one mesh type; the
/// class decides which cell list and which quadrature weight is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshClass {
    Planar,
    Radial3d,
}

/// One quadrature point: weight, position, and the P1 shape values of the
/// owning cell's nodes, so integration code is independent of the class.
#[derive(Clone, Debug)]
pub struct QuadPoint {
    pub cell: usize,
    pub w: f64,
    pub x: [f64; 2],
    pub nodes: [usize; 3],
    pub shape: [f64; 3],
}

/// Per-cell data for stiffness assembly: constant P1 shape gradients and the
/// measure weight multiplying grad-grad products (area for triangles,
/// `4π ∫ r² dr` for radial intervals).
#[derive(Clone, Debug)]
pub struct CellGeom {
    pub nodes: [usize; 3],
    pub grads: [[f64; 2]; 3],
    pub stiff_weight: f64,
    pub measure: f64,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub class: MeshClass,
    pub domain: Option<DomainSpec>,
    pub resolution: u32,
    pub nodes: Vec<[f64; 2]>,
    /// Triangles (planar) with counterclockwise orientation.
    pub tris: Vec<[usize; 3]>,
    /// Radial intervals (ball3d), ordered outward.
    pub segs: Vec<[usize; 2]>,
    pub boundary: Vec<bool>,
    pub interior_index: Vec<Option<usize>>,
    pub interior_nodes: Vec<usize>,
    pub quad: Vec<QuadPoint>,
    pub cells: Vec<CellGeom>,
    pub h_max: f64,
    /// Max |i - j| over cell node pairs; the band solvers size from this.
    pub bandwidth: usize,
    id: u64,
}

impl Mesh {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Total measure from the quadrature weights.
    pub fn measure(&self) -> f64 {
        kahan_sum(self.quad.iter().map(|q| q.w))
    }
}

/// Compensated summation; the unit-measure and unit-mass checks sit at
/// 1e-12 tolerances where naive accumulation over 1e5 terms gets noisy.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn build_mesh(spec: &DomainSpec, resolution: u32) -> Result<Mesh> {
    spec.validate()?;
    if resolution == 0 {
        return Err(Error::Usage("resolution must be positive".into()));
    }
    match &spec.kind {
        DomainKind::Disk => disk_mesh(spec.clone(), resolution),
        DomainKind::Rectangle { aspect } => rect_mesh(spec.clone(), *aspect, resolution),
        DomainKind::Polygon { vertices } => polygon_mesh(spec.clone(), vertices, resolution),
        DomainKind::Ball3d => ball3d_mesh(spec.clone(), resolution),
        DomainKind::PerturbedDisk {
            amplitude,
            modes,
            seed,
        } => {
            let base = disk_mesh(DomainSpec::disk(), resolution)?;
            let mut mesh = perturb_domain(&base, *amplitude, modes, *seed)?;
            mesh.domain = Some(spec.clone());
            Ok(mesh)
        }
    }
}

fn disk_mesh(spec: DomainSpec, resolution: u32) -> Result<Mesh> {
    let m = (resolution as usize / 2).max(2);
    let mut nodes: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; m + 1];
    for k in 1..=m {
        ring_start[k] = nodes.len();
        let nk = 6 * k;
        let r = k as f64 / m as f64;
        for j in 0..nk {
            let a = 2.0 * PI * j as f64 / nk as f64;
            nodes.push([r * a.cos(), r * a.sin()]);
        }
    }
    let mut tris = Vec::with_capacity(6 * m * m);
    for j in 0..6 {
        tris.push([0, 1 + j, 1 + (j + 1) % 6]);
    }
    for k in 2..=m {
        let inner: Vec<usize> = (0..6 * (k - 1)).map(|j| ring_start[k - 1] + j).collect();
        let outer: Vec<usize> = (0..6 * k).map(|j| ring_start[k] + j).collect();
        stitch_rings(&inner, &outer, &mut tris);
    }
    let boundary: Vec<bool> = (0..nodes.len()).map(|i| i >= ring_start[m]).collect();
    finalize_planar(spec, resolution, nodes, tris, Some(boundary))
}

/// Triangulate the annulus between two concentric node rings by an angular
/// merge, keeping all triangles counterclockwise.
fn stitch_rings(inner: &[usize], outer: &[usize], tris: &mut Vec<[usize; 3]>) {
    let (n1, n2) = (inner.len(), outer.len());
    let (mut ii, mut oo) = (0usize, 0usize);
    while ii < n1 || oo < n2 {
        let a_in = if ii < n1 {
            (ii + 1) as f64 / n1 as f64
        } else {
            f64::INFINITY
        };
        let a_out = if oo < n2 {
            (oo + 1) as f64 / n2 as f64
        } else {
            f64::INFINITY
        };
        if a_out <= a_in {
            tris.push([outer[oo % n2], outer[(oo + 1) % n2], inner[ii % n1]]);
            oo += 1;
        } else {
            tris.push([inner[ii % n1], outer[oo % n2], inner[(ii + 1) % n1]]);
            ii += 1;
        }
    }
}

fn rect_mesh(spec: DomainSpec, aspect: f64, resolution: u32) -> Result<Mesh> {
    let nx = resolution.max(2) as usize;
    let ny = ((resolution as f64 * aspect).round() as usize).max(2);
    let w = aspect.powf(-0.5);
    let h = w * aspect;
    let node_id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([
                (i as f64 / nx as f64 - 0.5) * w,
                (j as f64 / ny as f64 - 0.5) * h,
            ]);
        }
    }
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (bl, br) = (node_id(i, j), node_id(i + 1, j));
            let (tl, tr) = (node_id(i, j + 1), node_id(i + 1, j + 1));
            // alternate the diagonal so the mesh keeps the dihedral symmetry
            if (i + j) % 2 == 0 {
                tris.push([bl, br, tr]);
                tris.push([bl, tr, tl]);
            } else {
                tris.push([bl, br, tl]);
                tris.push([br, tr, tl]);
            }
        }
    }
    finalize_planar(spec, resolution, nodes, tris, None)
}

fn polygon_mesh(spec: DomainSpec, vertices: &[[f64; 2]], resolution: u32) -> Result<Mesh> {
    let mut verts = vertices.to_vec();
    let scale = verts
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, &c| m.max(c.abs()))
        .max(1e-300);
    for i in 0..verts.len() {
        let a = verts[i];
        let b = verts[(i + 1) % verts.len()];
        if (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-12 * scale {
            return Err(Error::Geometry(format!("repeated polygon vertex near index {i}")));
        }
    }
    let area2 = polygon_area2(&verts);
    if area2.abs() < 1e-12 * scale * scale {
        return Err(Error::Geometry("polygon area is degenerate".into()));
    }
    if area2 < 0.0 {
        verts.reverse();
    }
    if polygon_self_intersects(&verts) {
        return Err(Error::Geometry("polygon boundary self-intersects".into()));
    }
    let mut tris = ear_clip(&verts)?;
    let mut nodes = verts.clone();
    // uniform refinement until edges reach roughly diameter/resolution
    let diam = polygon_diameter(&verts);
    let target = diam / resolution as f64;
    for _ in 0..12 {
        let h = tris
            .iter()
            .map(|t| tri_longest_edge(&nodes, t))
            .fold(0.0f64, f64::max);
        if h <= target * 1.5 {
            break;
        }
        refine_uniform(&mut nodes, &mut tris);
    }
    let perm = reverse_cuthill_mckee(nodes.len(), &tris);
    apply_permutation(&mut nodes, &mut tris, &perm);
    finalize_planar(spec, resolution, nodes, tris, None)
}

fn polygon_area2(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum()
}

fn polygon_diameter(v: &[[f64; 2]]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            d = d.max((v[i][0] - v[j][0]).hypot(v[i][1] - v[j][1]));
        }
    }
    d
}

fn segments_cross(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let (d1, d2) = (orient(p, q, r), orient(p, q, s));
    let (d3, d4) = (orient(r, s, p), orient(r, s, q));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn polygon_self_intersects(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            // skip adjacent edges sharing a vertex
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Ear clipping for a simple counterclockwise polygon.
fn ear_clip(verts: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = verts.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut tris = Vec::with_capacity(n - 2);
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let inside = |a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]| {
        cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
    };
    let mut guard = 0usize;
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (verts[ia], verts[ib], verts[ic]);
            if cross(a, b, c) <= 0.0 {
                continue;
            }
            let mut ear = true;
            for &other in &idx {
                if other == ia || other == ib || other == ic {
                    continue;
                }
                if inside(a, b, c, verts[other]) {
                    ear = false;
                    break;
                }
            }
            if ear {
                tris.push([ia, ib, ic]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return Err(Error::Geometry("ear clipping failed; polygon may be degenerate".into()));
        }
        guard += 1;
        if guard > 4 * n {
            return Err(Error::Geometry("ear clipping did not terminate".into()));
        }
    }
    tris.push([idx[0], idx[1], idx[2]]);
    Ok(tris)
}

/// Split every triangle into four, sharing midpoints between neighbors.
fn refine_uniform(nodes: &mut Vec<[f64; 2]>, tris: &mut Vec<[usize; 3]>) {
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| {
        let key = (a.min(b), a.max(b));
        *mid.entry(key).or_insert_with(|| {
            let p = [
                0.5 * (nodes[a][0] + nodes[b][0]),
                0.5 * (nodes[a][1] + nodes[b][1]),
            ];
            nodes.push(p);
            nodes.len() - 1
        })
    };
    let mut out = Vec::with_capacity(4 * tris.len());
    for &[a, b, c] in tris.iter() {
        let ab = midpoint(a, b, nodes);
        let bc = midpoint(b, c, nodes);
        let ca = midpoint(c, a, nodes);
        out.push([a, ab, ca]);
        out.push([ab, b, bc]);
        out.push([ca, bc, c]);
        out.push([ab, bc, ca]);
    }
    *tris = out;
}

fn tri_longest_edge(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let mut h = 0.0f64;
    for e in 0..3 {
        let a = nodes[t[e]];
        let b = nodes[t[(e + 1) % 3]];
        h = h.max((a[0] - b[0]).hypot(a[1] - b[1]));
    }
    h
}

/// Reverse Cuthill-McKee node ordering to keep the band solvers effective on
/// unstructured (polygon) meshes. Deterministic tie-breaking by node index.
fn reverse_cuthill_mckee(n: usize, tris: &[[usize; 3]]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in tris {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    loop {
        let start = match (0..n)
            .filter(|&i| !seen[i])
            .min_by_key(|&i| (adj[i].len(), i))
        {
            Some(s) => s,
            None => break,
        };
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !seen[v]).collect();
            next.sort_unstable_by_key(|&v| (adj[v].len(), v));
            for v in next {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    // order[k] = old index placed at new position k; return old -> new
    let mut perm = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

fn apply_permutation(nodes: &mut Vec<[f64; 2]>, tris: &mut [[usize; 3]], perm: &[usize]) {
    let mut new_nodes = vec![[0.0; 2]; nodes.len()];
    for (old, &p) in perm.iter().enumerate() {
        new_nodes[p] = nodes[old];
    }
    *nodes = new_nodes;
    for t in tris.iter_mut() {
        for v in t.iter_mut() {
            *v = perm[*v];
        }
    }
}

fn ball3d_mesh(spec: DomainSpec, resolution: u32) -> Result<Mesh> {
    let m = (resolution as usize).max(4);
    let r_out = (3.0 / (4.0 * PI)).powf(1.0 / 3.0);
    let nodes: Vec<[f64; 2]> = (0..=m)
        .map(|i| [r_out * i as f64 / m as f64, 0.0])
        .collect();
    let segs: Vec<[usize; 2]> = (0..m).map(|i| [i, i + 1]).collect();
    let mut boundary = vec![false; m + 1];
    boundary[m] = true;
    let mut mesh = Mesh {
        class: MeshClass::Radial3d,
        domain: Some(spec),
        resolution,
        nodes,
        tris: Vec::new(),
        segs,
        boundary,
        interior_index: Vec::new(),
        interior_nodes: Vec::new(),
        quad: Vec::new(),
        cells: Vec::new(),
        h_max: 0.0,
        bandwidth: 0,
        id: MESH_ID.fetch_add(1, Ordering::Relaxed),
    };
    rebuild_radial(&mut mesh);
    rescale_to_unit(&mut mesh);
    Ok(mesh)
}

/// Fill interior maps, quadrature, cell geometry and h_max for a planar
/// triangulation, rescaling coordinates to unit measure.
fn finalize_planar(
    spec: DomainSpec,
    resolution: u32,
    nodes: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    boundary: Option<Vec<bool>>,
) -> Result<Mesh> {
    for (c, t) in tris.iter().enumerate() {
        if signed_area(&nodes, t) <= 0.0 {
            return Err(Error::Geometry(format!("cell {c} is degenerate or inverted")));
        }
    }
    let boundary = boundary.unwrap_or_else(|| boundary_from_incidence(nodes.len(), &tris));
    let mut mesh = Mesh {
        class: MeshClass::Planar,
        domain: Some(spec),
        resolution,
        nodes,
        tris,
        segs: Vec::new(),
        boundary,
        interior_index: Vec::new(),
        interior_nodes: Vec::new(),
        quad: Vec::new(),
        cells: Vec::new(),
        h_max: 0.0,
        bandwidth: 0,
        id: MESH_ID.fetch_add(1, Ordering::Relaxed),
    };
    rebuild_planar(&mut mesh);
    rescale_to_unit(&mut mesh);
    Ok(mesh)
}

fn signed_area(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (nodes[t[0]], nodes[t[1]], nodes[t[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn boundary_from_incidence(n: usize, tris: &[[usize; 3]]) -> Vec<bool> {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for t in tris {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut boundary = vec![false; n];
    for (&(a, b), &c) in count.iter() {
        if c == 1 {
            boundary[a] = true;
            boundary[b] = true;
        }
    }
    boundary
}

/// Midpoint quadrature (degree-2 exact) and P1 gradients per triangle.
fn rebuild_planar(mesh: &mut Mesh) {
    mesh.interior_index = vec![None; mesh.nodes.len()];
    mesh.interior_nodes.clear();
    for i in 0..mesh.nodes.len() {
        if !mesh.boundary[i] {
            mesh.interior_index[i] = Some(mesh.interior_nodes.len());
            mesh.interior_nodes.push(i);
        }
    }
    mesh.quad = Vec::with_capacity(3 * mesh.tris.len());
    mesh.cells = Vec::with_capacity(mesh.tris.len());
    let mut h_max = 0.0f64;
    let mut bw = 0usize;
    for (c, t) in mesh.tris.iter().enumerate() {
        let (p0, p1, p2) = (mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
        let area = signed_area(&mesh.nodes, t);
        // grad of barycentric coordinate i is the rotated opposite edge / 2A
        let grads = [
            [(p1[1] - p2[1]) / (2.0 * area), (p2[0] - p1[0]) / (2.0 * area)],
            [(p2[1] - p0[1]) / (2.0 * area), (p0[0] - p2[0]) / (2.0 * area)],
            [(p0[1] - p1[1]) / (2.0 * area), (p1[0] - p0[0]) / (2.0 * area)],
        ];
        mesh.cells.push(CellGeom {
            nodes: *t,
            grads,
            stiff_weight: area,
            measure: area,
        });
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
            h_max = h_max.max((pa[0] - pb[0]).hypot(pa[1] - pb[1]));
            bw = bw.max(a.abs_diff(b));
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let mut shape = [0.0; 3];
            shape[e] = 0.5;
            shape[(e + 1) % 3] = 0.5;
            mesh.quad.push(QuadPoint {
                cell: c,
                w: area / 3.0,
                x: mid,
                nodes: *t,
                shape,
            });
        }
    }
    mesh.h_max = h_max;
    mesh.bandwidth = bw;
}

/// Three-point Gauss quadrature per interval against the weight 4πr², so
/// products of P1 functions are integrated exactly in the radial metric.
fn rebuild_radial(mesh: &mut Mesh) {
    mesh.interior_index = vec![None; mesh.nodes.len()];
    mesh.interior_nodes.clear();
    for i in 0..mesh.nodes.len() {
        if !mesh.boundary[i] {
            mesh.interior_index[i] = Some(mesh.interior_nodes.len());
            mesh.interior_nodes.push(i);
        }
    }
    let g = (3.0f64 / 5.0).sqrt();
    let gauss = [(-g, 5.0 / 9.0), (0.0, 8.0 / 9.0), (g, 5.0 / 9.0)];
    mesh.quad = Vec::with_capacity(3 * mesh.segs.len());
    mesh.cells = Vec::with_capacity(mesh.segs.len());
    let mut h_max = 0.0f64;
    let mut bw = 0usize;
    for (c, s) in mesh.segs.iter().enumerate() {
        let (r0, r1) = (mesh.nodes[s[0]][0], mesh.nodes[s[1]][0]);
        let dr = r1 - r0;
        h_max = h_max.max(dr);
        bw = bw.max(s[0].abs_diff(s[1]));
        // 4π ∫ r² dr over the cell
        let wstiff = 4.0 * PI * (r1.powi(3) - r0.powi(3)) / 3.0;
        let gr = 1.0 / dr;
        mesh.cells.push(CellGeom {
            nodes: [s[0], s[1], s[0]],
            grads: [[-gr, 0.0], [gr, 0.0], [0.0, 0.0]],
            stiff_weight: wstiff,
            measure: wstiff,
        });
        for &(xi, wg) in &gauss {
            let r = 0.5 * (r0 + r1) + 0.5 * dr * xi;
            let w = wg * 0.5 * dr * 4.0 * PI * r * r;
            let sh1 = (r - r0) / dr;
            mesh.quad.push(QuadPoint {
                cell: c,
                w,
                x: [r, 0.0],
                nodes: [s[0], s[1], s[0]],
                shape: [1.0 - sh1, sh1, 0.0],
            });
        }
    }
    mesh.h_max = h_max;
    mesh.bandwidth = bw;
}

/// Dilate coordinates so the quadrature measure is 1 to roundoff; two passes
/// squeeze out the residual from the first one.
fn rescale_to_unit(mesh: &mut Mesh) {
    for _ in 0..2 {
        let measure = mesh.measure();
        let s = match mesh.class {
            MeshClass::Planar => (1.0 / measure).sqrt(),
            MeshClass::Radial3d => (1.0 / measure).powf(1.0 / 3.0),
        };
        if (s - 1.0).abs() < 1e-16 {
            return;
        }
        for p in mesh.nodes.iter_mut() {
            p[0] *= s;
            if mesh.class == MeshClass::Planar {
                p[1] *= s;
            }
        }
        match mesh.class {
            MeshClass::Planar => rebuild_planar(mesh),
            MeshClass::Radial3d => rebuild_radial(mesh),
        }
    }
}

/// Displace a planar mesh by a truncated Fourier boundary perturbation with
/// smooth radial blending, then restore unit measure. Connectivity is kept;
/// the map must preserve cell orientation everywhere or the call fails.
pub fn perturb_domain(base: &Mesh, amplitude: f64, modes: &[u32], seed: u64) -> Result<Mesh> {
    use rand::Rng;
    use rand::SeedableRng;
    if base.class != MeshClass::Planar {
        return Err(Error::Usage("perturb_domain requires a planar mesh".into()));
    }
    if modes.is_empty() || modes.contains(&0) {
        return Err(Error::Geometry("perturbation modes must be nonzero and nonempty".into()));
    }
    if amplitude == 0.0 {
        return Ok(base.clone());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(u32, f64, f64)> = modes
        .iter()
        .map(|&k| (k, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm: f64 = coeffs.iter().map(|&(_, a, b)| a.hypot(b)).sum();
    if norm == 0.0 {
        return Ok(base.clone());
    }
    let r_max = base
        .nodes
        .iter()
        .map(|p| p[0].hypot(p[1]))
        .fold(0.0f64, f64::max);
    let mut mesh = base.clone();
    for p in mesh.nodes.iter_mut() {
        let r = p[0].hypot(p[1]);
        let theta = p[1].atan2(p[0]);
        let d: f64 = coeffs
            .iter()
            .map(|&(k, a, b)| {
                (a * (k as f64 * theta).cos() + b * (k as f64 * theta).sin()) / norm
            })
            .sum();
        // quadratic blending keeps the center fixed and the map smooth there
        let f = 1.0 + amplitude * (r / r_max).powi(2) * d;
        p[0] *= f;
        p[1] *= f;
    }
    for (c, t) in mesh.tris.iter().enumerate() {
        if signed_area(&mesh.nodes, t) <= 0.0 {
            return Err(Error::PerturbationTooLarge(format!(
                "cell {c} inverted at amplitude {amplitude}"
            )));
        }
    }
    check_boundary_winding(&mesh)?;
    mesh.id = MESH_ID.fetch_add(1, Ordering::Relaxed);
    rebuild_planar(&mut mesh);
    rescale_to_unit(&mut mesh);
    Ok(mesh)
}

/// The boundary loop must wind exactly once around its centroid.
fn check_boundary_winding(mesh: &Mesh) -> Result<()> {
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for t in &mesh.tris {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    for t in &mesh.tris {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            if count[&(a.min(b), a.max(b))] == 1 {
                next.insert(a, b);
            }
        }
    }
    let &start = match next.keys().min() {
        Some(s) => s,
        None => return Err(Error::Geometry("mesh has no boundary loop".into())),
    };
    let mut loop_nodes = vec![start];
    let mut cur = next[&start];
    while cur != start {
        loop_nodes.push(cur);
        cur = match next.get(&cur) {
            Some(&n) => n,
            None => return Err(Error::Geometry("boundary loop is broken".into())),
        };
        if loop_nodes.len() > mesh.nodes.len() {
            return Err(Error::Geometry("boundary walk did not close".into()));
        }
    }
    let cx = loop_nodes.iter().map(|&i| mesh.nodes[i][0]).sum::<f64>() / loop_nodes.len() as f64;
    let cy = loop_nodes.iter().map(|&i| mesh.nodes[i][1]).sum::<f64>() / loop_nodes.len() as f64;
    let mut winding = 0.0;
    for k in 0..loop_nodes.len() {
        let a = mesh.nodes[loop_nodes[k]];
        let b = mesh.nodes[loop_nodes[(k + 1) % loop_nodes.len()]];
        let t0 = (a[1] - cy).atan2(a[0] - cx);
        let t1 = (b[1] - cy).atan2(b[0] - cx);
        let mut dt = t1 - t0;
        while dt > PI {
            dt -= 2.0 * PI;
        }
        while dt < -PI {
            dt += 2.0 * PI;
        }
        winding += dt;
    }
    if (winding - 2.0 * PI).abs() > 1e-6 {
        return Err(Error::PerturbationTooLarge(format!(
            "boundary winding {:.3} differs from 2π; the boundary folded over",
            winding
        )));
    }
    Ok(())
}

/// Plain-text mesh serialization: header with counts, node coordinates,
/// cell node indices, and per-node boundary flags.
pub fn mesh_export(mesh: &Mesh) -> String {
    let mut out = String::new();
    let class = match mesh.class {
        MeshClass::Planar => "planar",
        MeshClass::Radial3d => "radial3d",
    };
    let n_cells = match mesh.class {
        MeshClass::Planar => mesh.tris.len(),
        MeshClass::Radial3d => mesh.segs.len(),
    };
    out.push_str("# plasma-branch mesh v1\n");
    out.push_str(&format!("{} {} {}\n", class, mesh.nodes.len(), n_cells));
    for p in &mesh.nodes {
        out.push_str(&format!("{:.16e} {:.16e}\n", p[0], p[1]));
    }
    match mesh.class {
        MeshClass::Planar => {
            for t in &mesh.tris {
                out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
            }
        }
        MeshClass::Radial3d => {
            for s in &mesh.segs {
                out.push_str(&format!("{} {}\n", s[0], s[1]));
            }
        }
    }
    for &b in &mesh.boundary {
        out.push_str(if b { "1\n" } else { "0\n" });
    }
    out
}

pub fn mesh_import(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Usage("empty mesh file".into()))?;
    let mut parts = header.split_whitespace();
    let class = match parts.next() {
        Some("planar") => MeshClass::Planar,
        Some("radial3d") => MeshClass::Radial3d,
        other => return Err(Error::Usage(format!("unknown mesh class {:?}", other))),
    };
    let n_nodes: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Usage("bad node count".into()))?;
    let n_cells: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Usage("bad cell count".into()))?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let line = lines
            .next()
            .ok_or_else(|| Error::Usage("truncated node list".into()))?;
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Usage("bad node coordinate".into()))?;
        let y: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Usage("bad node coordinate".into()))?;
        nodes.push([x, y]);
    }
    let mut tris = Vec::new();
    let mut segs = Vec::new();
    for _ in 0..n_cells {
        let line = lines
            .next()
            .ok_or_else(|| Error::Usage("truncated cell list".into()))?;
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Usage(format!("bad cell index: {e}")))?;
        match (class, ids.len()) {
            (MeshClass::Planar, 3) => tris.push([ids[0], ids[1], ids[2]]),
            (MeshClass::Radial3d, 2) => segs.push([ids[0], ids[1]]),
            _ => return Err(Error::Usage("cell arity does not match mesh class".into())),
        }
    }
    let mut boundary = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let line = lines
            .next()
            .ok_or_else(|| Error::Usage("truncated boundary flags".into()))?;
        boundary.push(line.trim() == "1");
    }
    for t in &tris {
        if t.iter().any(|&i| i >= n_nodes) {
            return Err(Error::Usage("cell index out of range".into()));
        }
    }
    for s in &segs {
        if s.iter().any(|&i| i >= n_nodes) {
            return Err(Error::Usage("cell index out of range".into()));
        }
    }
    let mut mesh = Mesh {
        class,
        domain: None,
        resolution: 0,
        nodes,
        tris,
        segs,
        boundary,
        interior_index: Vec::new(),
        interior_nodes: Vec::new(),
        quad: Vec::new(),
        cells: Vec::new(),
        h_max: 0.0,
        bandwidth: 0,
        id: MESH_ID.fetch_add(1, Ordering::Relaxed),
    };
    match class {
        MeshClass::Planar => rebuild_planar(&mut mesh),
        MeshClass::Radial3d => rebuild_radial(&mut mesh),
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_mesh_has_unit_measure_and_expected_radius() {
        let mesh = build_mesh(&DomainSpec::disk(), 32).unwrap();
        assert!((mesh.measure() - 1.0).abs() < 1e-12);
        let r_b = mesh
            .nodes
            .iter()
            .zip(&mesh.boundary)
            .filter(|(_, &b)| b)
            .map(|(p, _)| p[0].hypot(p[1]))
            .fold(0.0f64, f64::max);
        // boundary radius approaches 1/sqrt(pi) from above as the polygon
        // converges to the disk
        let target = PI.powf(-0.5);
        assert!((r_b - target).abs() < 20.0 * mesh.h_max * mesh.h_max + 2e-3,
            "boundary radius {r_b} vs {target}");
    }

    #[test]
    fn disk_h_max_decreases_with_resolution() {
        let h: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&r| build_mesh(&DomainSpec::disk(), r).unwrap().h_max)
            .collect();
        assert!(h[0] > h[1] && h[1] > h[2], "h sequence {:?}", h);
        // roughly halving
        assert!(h[0] / h[1] > 1.6 && h[1] / h[2] > 1.6);
    }

    #[test]
    fn disk_cells_are_positively_oriented() {
        let mesh = build_mesh(&DomainSpec::disk(), 24).unwrap();
        for t in &mesh.tris {
            assert!(signed_area(&mesh.nodes, t) > 0.0);
        }
    }

    #[test]
    fn rectangle_mesh_counts_and_measure() {
        let spec = DomainSpec::new(DomainKind::Rectangle { aspect: 2.0 });
        let mesh = build_mesh(&spec, 16).unwrap();
        assert!((mesh.measure() - 1.0).abs() < 1e-12);
        assert_eq!(mesh.node_count(), 17 * 33);
        assert_eq!(mesh.tris.len(), 2 * 16 * 32);
    }

    #[test]
    fn square_interior_count_matches_grid() {
        let mesh = build_mesh(&DomainSpec::square(), 8).unwrap();
        assert_eq!(mesh.interior_count(), 7 * 7);
    }

    #[test]
    fn lshape_polygon_meshes_with_unit_measure() {
        let spec = DomainSpec::new(DomainKind::Polygon {
            vertices: vec![
                [0.0, 0.0],
                [2.0, 0.0],
                [2.0, 1.0],
                [1.0, 1.0],
                [1.0, 2.0],
                [0.0, 2.0],
            ],
        });
        let mesh = build_mesh(&spec, 16).unwrap();
        assert!((mesh.measure() - 1.0).abs() < 1e-12);
        for t in &mesh.tris {
            assert!(signed_area(&mesh.nodes, t) > 0.0);
        }
        assert!(mesh.interior_count() > 50);
    }

    #[test]
    fn bowtie_polygon_is_rejected() {
        let spec = DomainSpec::new(DomainKind::Polygon {
            vertices: vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
        });
        match build_mesh(&spec, 8) {
            Err(Error::Geometry(_)) => {}
            other => panic!("expected geometry error, got {:?}", other.map(|m| m.node_count())),
        }
    }

    #[test]
    fn ball3d_measure_and_boundary() {
        let mesh = build_mesh(&DomainSpec::ball3d(), 64).unwrap();
        assert!((mesh.measure() - 1.0).abs() < 1e-12);
        let n = mesh.node_count();
        assert!(mesh.boundary[n - 1]);
        assert_eq!(mesh.boundary.iter().filter(|&&b| b).count(), 1);
        let r_out = mesh.nodes[n - 1][0];
        assert!((r_out - (3.0 / (4.0 * PI)).powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn perturbation_is_seed_deterministic_and_measure_preserving() {
        let base = build_mesh(&DomainSpec::disk(), 24).unwrap();
        let a = perturb_domain(&base, 0.05, &[2, 3], 42).unwrap();
        let b = perturb_domain(&base, 0.05, &[2, 3], 42).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert!((a.measure() - 1.0).abs() < 1e-12);
        assert_eq!(a.tris, base.tris);
        let c = perturb_domain(&base, 0.05, &[2, 3], 43).unwrap();
        assert_ne!(a.nodes, c.nodes);
    }

    #[test]
    fn zero_amplitude_returns_identical_mesh() {
        let base = build_mesh(&DomainSpec::disk(), 16).unwrap();
        let same = perturb_domain(&base, 0.0, &[2], 7).unwrap();
        assert_eq!(same.nodes, base.nodes);
        assert_eq!(same.id(), base.id());
    }

    #[test]
    fn oversized_perturbation_fails_cleanly() {
        let base = build_mesh(&DomainSpec::disk(), 16).unwrap();
        match perturb_domain(&base, 0.5, &[8], 1) {
            Err(Error::PerturbationTooLarge(_)) => {}
            other => panic!("expected perturbation error, got {:?}", other.map(|m| m.node_count())),
        }
    }

    #[test]
    fn export_import_round_trip() {
        let mesh = build_mesh(&DomainSpec::disk(), 12).unwrap();
        let text = mesh_export(&mesh);
        let back = mesh_import(&text).unwrap();
        assert_eq!(back.nodes, mesh.nodes);
        assert_eq!(back.tris, mesh.tris);
        assert_eq!(back.boundary, mesh.boundary);
        assert!((back.measure() - mesh.measure()).abs() < 1e-15);

        let ball = build_mesh(&DomainSpec::ball3d(), 10).unwrap();
        let back = mesh_import(&mesh_export(&ball)).unwrap();
        assert_eq!(back.segs, ball.segs);
        assert_eq!(back.nodes, ball.nodes);
    }

    #[test]
    fn quadrature_weights_sum_to_measure() {
        for spec in [DomainSpec::disk(), DomainSpec::square(), DomainSpec::ball3d()] {
            let mesh = build_mesh(&spec, 20).unwrap();
            let total = kahan_sum(mesh.quad.iter().map(|q| q.w));
            assert!((total - 1.0).abs() < 1e-12, "{:?}: {total}", mesh.class);
        }
    }
}
