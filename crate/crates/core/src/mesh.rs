//! Closed triangle meshes with a bounding-volume hierarchy for nearest-point,
//! winding-number and ray queries, plus binary STL I/O and a few analytic
//! primitives.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::anatomy::{Level, PedicleRegion};
use crate::{Error, Result, Vec3};

const LEAF_SIZE: usize = 4;
/// Far-field acceptance ratio for the dipole winding-number approximation.
const WINDING_BETA: f64 = 2.5;
const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `start..start+count` in `order`. Inner: children at `left`, `left+1`.
    start: usize,
    count: usize,
    left: usize,
    /// Area-weighted normal sum (`Σ ½ e1×e2`) and centroid for the far field.
    area_normal: Vec3,
    centroid: Vec3,
    radius: f64,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    fn ray_interval(&self, o: &Vec3, inv: &Vec3, tmax: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = tmax;
        for k in 0..3 {
            let a = (self.lo[k] - o[k]) * inv[k];
            let b = (self.hi[k] - o[k]) * inv[k];
            // 0 * inf: a parallel ray starting on the slab plane lies inside it
            if a.is_nan() || b.is_nan() {
                continue;
            }
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Watertight, consistently outward-oriented triangle mesh of one vertebra.
#[derive(Debug, Clone)]
pub struct VertebraMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    pub level: Option<Level>,
    pub pedicle_regions: Vec<PedicleRegion>,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Signed solid angle subtended by triangle `abc` at `p` (Van Oosterom & Strackee).
pub fn triangle_solid_angle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (a, b, c) = (a - p, b - p, c - p);
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
    2.0 * num.atan2(den)
}

impl VertebraMesh {
    /// Validates topology and builds the acceleration structure.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        let nv = vertices.len() as u32;
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        let mut edges: HashMap<(u32, u32), u32> = HashMap::with_capacity(triangles.len() * 3);
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {i} indexes past the vertex list")));
            }
            let [a, b, c] = t.map(|k| vertices[k as usize]);
            if (b - a).cross(&(c - a)).norm() * 0.5 <= MIN_TRIANGLE_AREA {
                return Err(Error::Degenerate(format!("triangle {i} has zero area")));
            }
            for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((u, v)).or_insert(0) += 1;
            }
        }
        for (&(u, v), &n) in &edges {
            if n != 1 {
                return Err(Error::InvalidMesh(format!(
                    "directed edge ({u},{v}) used {n} times; orientation inconsistent or non-manifold"
                )));
            }
            if !edges.contains_key(&(v, u)) {
                return Err(Error::InvalidMesh(format!("boundary edge ({u},{v}); mesh is not closed")));
            }
        }
        let mut mesh = Self {
            vertices,
            triangles,
            level: None,
            pedicle_regions: Vec::new(),
            nodes: Vec::new(),
            order: Vec::new(),
        };
        if mesh.signed_volume() <= 0.0 {
            return Err(Error::InvalidMesh("triangles are oriented inward".into()));
        }
        mesh.build_bvh();
        Ok(mesh)
    }

    pub fn with_level(mut self, level: Level) -> Self {
        self.level = Some(level);
        self
    }

    pub fn with_regions(mut self, regions: Vec<PedicleRegion>) -> Self {
        self.pedicle_regions = regions;
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    fn tri(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|k| self.vertices[k as usize])
    }

    /// Unit outward normal of triangle `i`.
    pub fn triangle_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.tri(i);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|k| self.vertices[k as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.nodes[0].lo, self.nodes[0].hi)
    }

    pub fn centroid(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        (lo + hi) * 0.5
    }

    fn build_bvh(&mut self) {
        let n = self.triangles.len();
        let centroids: Vec<Vec3> = (0..n)
            .map(|i| {
                let [a, b, c] = self.tri(i);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = vec![self.make_node(&order, 0, n)];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            if count <= LEAF_SIZE {
                continue;
            }
            let slice = &mut order[start..start + count];
            let (mut clo, mut chi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
            for &t in slice.iter() {
                clo = clo.inf(&centroids[t as usize]);
                chi = chi.sup(&centroids[t as usize]);
            }
            let axis = (chi - clo).imax();
            slice.sort_by(|&x, &y| {
                centroids[x as usize][axis]
                    .total_cmp(&centroids[y as usize][axis])
                    .then(x.cmp(&y))
            });
            let mid = count / 2;
            let left = nodes.len();
            let l = self.make_node(&order, start, mid);
            let r = self.make_node(&order, start + mid, count - mid);
            nodes.push(l);
            nodes.push(r);
            nodes[ni].count = 0;
            nodes[ni].left = left;
            stack.push(left);
            stack.push(left + 1);
        }
        self.nodes = nodes;
        self.order = order;
    }

    fn make_node(&self, order: &[u32], start: usize, count: usize) -> Node {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut area_normal = Vec3::zeros();
        let mut weighted = Vec3::zeros();
        let mut area = 0.0;
        for &t in &order[start..start + count] {
            let [a, b, c] = self.tri(t as usize);
            for v in [a, b, c] {
                lo = lo.inf(&v);
                hi = hi.sup(&v);
            }
            let an = (b - a).cross(&(c - a)) * 0.5;
            let ar = an.norm();
            area_normal += an;
            weighted += (a + b + c) / 3.0 * ar;
            area += ar;
        }
        let centroid = weighted / area;
        let mut radius: f64 = 0.0;
        for &t in &order[start..start + count] {
            for v in self.tri(t as usize) {
                radius = radius.max((v - centroid).norm());
            }
        }
        Node {
            lo,
            hi,
            start,
            count,
            left: 0,
            area_normal,
            centroid,
            radius,
        }
    }

    /// Closest surface point and its triangle index.
    pub fn closest_point(&self, p: &Vec3) -> (Vec3, usize) {
        let mut best = (f64::INFINITY, Vec3::zeros(), 0usize);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.dist2(p) >= best.0 {
                continue;
            }
            if node.is_leaf() {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.tri(t as usize);
                    let q = closest_point_on_triangle(p, &a, &b, &c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && (t as usize) < best.2) {
                        best = (d2, q, t as usize);
                    }
                }
            } else {
                let (l, r) = (node.left, node.left + 1);
                let (dl, dr) = (self.nodes[l].dist2(p), self.nodes[r].dist2(p));
                // push the farther child first so the nearer is visited first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        (best.1, best.2)
    }

    /// Unsigned distance to the surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        (self.closest_point(p).0 - p).norm()
    }

    /// Generalized winding number using a far-field dipole approximation for
    /// distant BVH clusters. ≈1 inside, ≈0 outside.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let r = node.centroid - p;
            let dist = r.norm();
            if dist > WINDING_BETA * node.radius {
                total += node.area_normal.dot(&r) / (dist * dist * dist);
            } else if node.is_leaf() {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.tri(t as usize);
                    total += triangle_solid_angle(p, &a, &b, &c);
                }
            } else {
                stack.push(node.left);
                stack.push(node.left + 1);
            }
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Exact winding number by summing every triangle's solid angle.
    pub fn winding_number_exact(&self, p: &Vec3) -> f64 {
        let total: f64 = (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.tri(i);
                triangle_solid_angle(p, &a, &b, &c)
            })
            .sum();
        total / (4.0 * std::f64::consts::PI)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.winding_number(p) > 0.5
    }

    /// Distance to the surface, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = self.distance(p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// First ray parameter in `[0, tmax]` where the ray crosses a triangle
    /// from outside to inside (`normal · dir < 0`). `dir` need not be unit.
    pub fn first_entering_hit(&self, origin: &Vec3, dir: &Vec3, tmax: f64) -> Option<(f64, usize)> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let limit = best.map_or(tmax, |b| b.0);
            if node.ray_interval(origin, &inv, limit).is_none() {
                continue;
            }
            if node.is_leaf() {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.tri(t as usize);
                    let n = (b - a).cross(&(c - a));
                    if n.dot(dir) >= 0.0 {
                        continue;
                    }
                    if let Some(s) = ray_triangle(origin, dir, &a, &b, &c) {
                        let better = match best {
                            None => true,
                            Some((bt, bi)) => s < bt || (s == bt && (t as usize) < bi),
                        };
                        if s >= 0.0 && s <= tmax && better {
                            best = Some((s, t as usize));
                        }
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.left + 1);
            }
        }
        best
    }
}

/// Möller–Trumbore ray/triangle intersection, edges inclusive.
fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let h = d.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 {
        return None;
    }
    let f = 1.0 / det;
    let s = o - a;
    let u = f * s.dot(&h);
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = f * d.dot(&q);
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(f * e2.dot(&q))
}

/// Reads a binary STL, welding bit-identical vertices.
pub fn read_stl(path: impl AsRef<Path>) -> Result<VertebraMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |m: &str| Error::Parse {
        what: "binary STL",
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if bytes.len() < 84 {
        return Err(parse_err("file shorter than the 84-byte header"));
    }
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    if bytes.len() != 84 + n * 50 {
        return Err(parse_err(&format!(
            "expected {} bytes for {n} triangles, found {}",
            84 + n * 50,
            bytes.len()
        )));
    }
    let mut index: HashMap<[u32; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(n);
    for t in 0..n {
        let rec = &bytes[84 + t * 50..84 + (t + 1) * 50];
        let mut tri = [0u32; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let off = 12 + k * 12;
            let bits = [0, 1, 2].map(|c| {
                let o = off + c * 4;
                u32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]])
            });
            *slot = *index.entry(bits).or_insert_with(|| {
                vertices.push(Vec3::new(
                    f32::from_bits(bits[0]) as f64,
                    f32::from_bits(bits[1]) as f64,
                    f32::from_bits(bits[2]) as f64,
                ));
                (vertices.len() - 1) as u32
            });
        }
        triangles.push(tri);
    }
    VertebraMesh::new(vertices, triangles)
}

/// Writes a binary STL (coordinates rounded to f32).
pub fn write_stl(mesh: &VertebraMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(84 + mesh.triangles.len() * 50);
    let mut header = [0u8; 80];
    let tag = b"pedisim binary stl";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for i in 0..mesh.triangles.len() {
        let n = mesh.triangle_normal(i);
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for v in mesh.tri(i) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Orthonormal pair perpendicular to `axis`, deterministic for a given axis.
pub fn perpendicular_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let a = axis.normalize();
    let hint = if a.x.abs() < 0.6 {
        Vec3::x()
    } else if a.y.abs() < 0.6 {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = (hint - a * a.dot(&hint)).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

pub mod primitives {
    //! Analytic closed meshes used by phantoms and tests.

    use super::*;

    /// Axis-aligned box.
    pub fn cuboid(lo: Vec3, hi: Vec3) -> Result<VertebraMesh> {
        let v = |x: usize, y: usize, z: usize| {
            Vec3::new(
                if x == 0 { lo.x } else { hi.x },
                if y == 0 { lo.y } else { hi.y },
                if z == 0 { lo.z } else { hi.z },
            )
        };
        let mut vertices = Vec::with_capacity(8);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    vertices.push(v(x, y, z));
                }
            }
        }
        let id = |x: u32, y: u32, z: u32| x + 2 * y + 4 * z;
        // quads counter-clockwise seen from outside
        let quads = [
            [id(0, 0, 0), id(0, 1, 0), id(1, 1, 0), id(1, 0, 0)], // -z
            [id(0, 0, 1), id(1, 0, 1), id(1, 1, 1), id(0, 1, 1)], // +z
            [id(0, 0, 0), id(1, 0, 0), id(1, 0, 1), id(0, 0, 1)], // -y
            [id(0, 1, 0), id(0, 1, 1), id(1, 1, 1), id(1, 1, 0)], // +y
            [id(0, 0, 0), id(0, 0, 1), id(0, 1, 1), id(0, 1, 0)], // -x
            [id(1, 0, 0), id(1, 1, 0), id(1, 1, 1), id(1, 0, 1)], // +x
        ];
        let mut triangles = Vec::with_capacity(12);
        for q in quads {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        }
        VertebraMesh::new(vertices, triangles)
    }

    /// Icosphere with vertices on the analytic sphere.
    pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> Result<VertebraMesh> {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let vertices = verts.into_iter().map(|v| center + v * radius).collect();
        VertebraMesh::new(vertices, faces)
    }

    /// Capped cylinder from `start` along `axis` with `segments` around.
    pub fn cylinder(start: Vec3, axis: Vec3, length: f64, radius: f64, segments: usize) -> Result<VertebraMesh> {
        if !(length > 0.0 && radius > 0.0) || segments < 3 {
            return Err(Error::invalid("cylinder needs positive length, radius and >= 3 segments"));
        }
        let a = axis.normalize();
        let (e1, e2) = perpendicular_basis(&a);
        let end = start + a * length;
        let n = segments as u32;
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for ring in [start, end] {
            for i in 0..segments {
                let th = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
                vertices.push(ring + (e1 * th.cos() + e2 * th.sin()) * radius);
            }
        }
        let cb = vertices.len() as u32;
        vertices.push(start);
        vertices.push(end);
        let ct = cb + 1;
        let mut triangles = Vec::with_capacity(4 * segments);
        for i in 0..n {
            let j = (i + 1) % n;
            let (bi, bj, ti, tj) = (i, j, n + i, n + j);
            triangles.push([bi, bj, tj]);
            triangles.push([bi, tj, ti]);
            triangles.push([cb, bj, bi]);
            triangles.push([ct, ti, tj]);
        }
        VertebraMesh::new(vertices, triangles)
    }

    /// Disjoint union of closed meshes.
    pub fn union_disjoint(parts: &[VertebraMesh]) -> Result<VertebraMesh> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for p in parts {
            let off = vertices.len() as u32;
            vertices.extend_from_slice(p.vertices());
            triangles.extend(p.triangles().iter().map(|t| t.map(|k| k + off)));
        }
        VertebraMesh::new(vertices, triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::primitives::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere() -> VertebraMesh {
        icosphere(Vec3::zeros(), 20.0, 3).unwrap()
    }

    #[test]
    fn sphere_signed_distance_oracle() {
        let m = sphere();
        let c = m.signed_distance(&Vec3::zeros());
        // faceting: inscribed facets of a level-3 icosphere sit within ~0.2 mm
        assert!((c + 20.0).abs() < 0.25, "centre sd {c}");
        let far = m.signed_distance(&Vec3::new(30.0, 0.0, 0.0));
        assert!((far - 10.0).abs() < 0.25, "outside sd {far}");
        let v = m.vertices()[17];
        assert!(m.signed_distance(&v).abs() < 1e-12);
    }

    #[test]
    fn winding_inside_outside() {
        let m = sphere();
        assert!((m.winding_number_exact(&Vec3::zeros()) - 1.0).abs() < 1e-9);
        assert!(m.winding_number_exact(&Vec3::new(50.0, 1.0, 2.0)).abs() < 1e-9);
        let b = cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert!((b.winding_number_exact(&Vec3::new(0.5, 1.0, 1.5)) - 1.0).abs() < 1e-9);
        assert!((b.signed_volume() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fast_winding_matches_exact() {
        let m = union_disjoint(&[
            sphere(),
            cylinder(Vec3::new(40.0, 0.0, 0.0), Vec3::y(), 30.0, 4.0, 48).unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..400 {
            let p = Vec3::new(
                rng.random_range(-30.0..60.0),
                rng.random_range(-30.0..40.0),
                rng.random_range(-30.0..30.0),
            );
            if m.distance(&p) < 0.3 {
                continue;
            }
            let fast = m.winding_number(&p);
            let exact = m.winding_number_exact(&p);
            assert!((fast - exact).abs() < 0.05, "{p:?}: {fast} vs {exact}");
            assert_eq!(fast > 0.5, exact > 0.5);
        }
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let m = cylinder(Vec3::zeros(), Vec3::new(0.3, 1.0, 0.1), 25.0, 3.0, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let p = Vec3::new(
                rng.random_range(-10.0..20.0),
                rng.random_range(-10.0..35.0),
                rng.random_range(-10.0..10.0),
            );
            let brute = (0..m.triangles().len())
                .map(|i| {
                    let [a, b, c] = m.tri(i);
                    (closest_point_on_triangle(&p, &a, &b, &c) - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((m.distance(&p) - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn entering_ray_hit() {
        let b = cuboid(Vec3::new(-50.0, -50.0, -50.0), Vec3::new(50.0, 50.0, 50.0)).unwrap();
        let (t, _) = b
            .first_entering_hit(&Vec3::new(3.0, -80.0, 1.0), &Vec3::y(), 200.0)
            .unwrap();
        assert!((t - 30.0).abs() < 1e-12);
        // starting inside: the only crossings are exits
        assert!(b.first_entering_hit(&Vec3::zeros(), &Vec3::y(), 200.0).is_none());
        assert!(b
            .first_entering_hit(&Vec3::new(80.0, -80.0, 0.0), &Vec3::y(), 200.0)
            .is_none());
    }

    #[test]
    fn rejects_open_and_degenerate_meshes() {
        let b = cuboid(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        let mut tris = b.triangles().to_vec();
        tris.pop();
        assert!(matches!(
            VertebraMesh::new(b.vertices().to_vec(), tris),
            Err(Error::InvalidMesh(_))
        ));
        let flipped: Vec<[u32; 3]> = b.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect();
        assert!(VertebraMesh::new(b.vertices().to_vec(), flipped).is_err());
        let mut tris = b.triangles().to_vec();
        tris[0] = [tris[0][0], tris[0][1], tris[0][0]];
        assert!(VertebraMesh::new(b.vertices().to_vec(), tris).is_err());
    }

    #[test]
    fn primitives_are_watertight_and_outward() {
        for m in [
            cuboid(Vec3::zeros(), Vec3::new(2.0, 3.0, 4.0)).unwrap(),
            sphere(),
            cylinder(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), 10.0, 2.0, 16).unwrap(),
        ] {
            assert!(m.signed_volume() > 0.0);
        }
        let c = cylinder(Vec3::zeros(), Vec3::z(), 10.0, 2.0, 64).unwrap();
        let expected = std::f64::consts::PI * 4.0 * 10.0;
        assert!((c.signed_volume() - expected).abs() / expected < 0.01);
    }

    #[test]
    fn stl_roundtrip() {
        let m = icosphere(Vec3::new(1.5, -2.0, 0.25), 10.0, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.stl");
        write_stl(&m, &p).unwrap();
        let back = read_stl(&p).unwrap();
        assert_eq!(back.triangles().len(), m.triangles().len());
        assert_eq!(back.vertices().len(), m.vertices().len());
        for i in 0..m.triangles().len() {
            for (a, b) in back.tri(i).iter().zip(m.tri(i).iter()) {
                assert!((a - b).norm() < 1e-5);
            }
        }
        std::fs::write(&p, [0u8; 90]).unwrap();
        assert!(matches!(read_stl(&p), Err(Error::Parse { .. })));
    }
}
