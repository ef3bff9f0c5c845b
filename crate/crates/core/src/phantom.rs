//! Procedural test scenes: voxel volume, matching mesh and pedicle
//! annotations for analytic solids.
//!
//! The corridor vertebra is a capsule body (label 1) pierced on each side by
//! a cylindrical cancellous corridor (label 3) wrapped in a cortical shell
//! (label 2). Its mesh is the pair of corridors, so breach grading measures
//! how far the cannula leaves the safe channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{Level, Side};
use crate::mesh::primitives::{cuboid, cylinder, icosphere, union_disjoint};
use crate::mesh::VertebraMesh;
use crate::planner::PedicleAnnotation;
use crate::volume::{apply_materials, Material, MaterialTable, VoxelVolume};
use crate::{Error, Result, Vec3};

const CORRIDOR_SEGMENTS: usize = 64;
const SPHERE_SUBDIVISIONS: u32 = 4;

fn default_voxel() -> f64 {
    1.0
}
fn default_padding() -> f64 {
    8.0
}
fn default_level() -> Level {
    "L1".parse().expect("valid level")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomSpec {
    /// Axis-aligned box centred at the origin.
    Box {
        size_mm: [f64; 3],
        attenuation: f64,
        #[serde(default = "default_voxel")]
        voxel_mm: f64,
        #[serde(default = "default_padding")]
        padding_mm: f64,
    },
    Sphere {
        radius_mm: f64,
        attenuation: f64,
        #[serde(default = "default_voxel")]
        voxel_mm: f64,
        #[serde(default = "default_padding")]
        padding_mm: f64,
    },
    CorridorVertebra(CorridorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorSpec {
    pub inner_radius_mm: f64,
    pub body_radius_mm: f64,
    pub body_half_height_mm: f64,
    pub shell_mm: f64,
    pub corridor_length_mm: f64,
    /// Planned insertion depth along each corridor.
    pub depth_mm: f64,
    /// Lateral offset of each corridor entry from the midline.
    pub entry_offset_mm: f64,
    /// Posterior position of the entries (negative y).
    pub entry_y_mm: f64,
    pub medial_angle_deg: f64,
    /// Uniform seeded jitter added to the medial angle, ± this many degrees.
    pub angle_jitter_deg: f64,
    pub body_attenuation: f64,
    pub shell_attenuation: f64,
    pub corridor_attenuation: f64,
    pub voxel_mm: f64,
    pub padding_mm: f64,
    pub level: Level,
    pub seed: u64,
}

impl Default for CorridorSpec {
    fn default() -> Self {
        Self {
            inner_radius_mm: 4.0,
            body_radius_mm: 20.0,
            body_half_height_mm: 12.0,
            shell_mm: 1.5,
            corridor_length_mm: 30.0,
            depth_mm: 25.0,
            entry_offset_mm: 15.0,
            entry_y_mm: -30.0,
            medial_angle_deg: 15.0,
            angle_jitter_deg: 0.0,
            body_attenuation: 0.025,
            shell_attenuation: 0.06,
            corridor_attenuation: 0.02,
            voxel_mm: default_voxel(),
            padding_mm: default_padding(),
            level: default_level(),
            seed: 0,
        }
    }
}

impl CorridorSpec {
    pub fn with_radius(inner_radius_mm: f64) -> Self {
        Self {
            inner_radius_mm,
            ..Self::default()
        }
    }

    fn medial_angle(&self) -> f64 {
        if self.angle_jitter_deg > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.medial_angle_deg + rng.random_range(-self.angle_jitter_deg..=self.angle_jitter_deg)
        } else {
            self.medial_angle_deg
        }
    }

    /// Entry point and unit axis of the corridor on `side`.
    pub fn corridor(&self, side: Side) -> (Vec3, Vec3) {
        let a = self.medial_angle().to_radians();
        // patient left is -x; both corridors tilt toward the midline
        let sign = match side {
            Side::Left => -1.0,
            Side::Right => 1.0,
        };
        let entry = Vec3::new(sign * self.entry_offset_mm, self.entry_y_mm, 0.0);
        let axis = Vec3::new(-sign * a.sin(), a.cos(), 0.0);
        (entry, axis)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            self.inner_radius_mm,
            self.body_radius_mm,
            self.body_half_height_mm,
            self.shell_mm,
            self.corridor_length_mm,
            self.depth_mm,
            self.voxel_mm,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.padding_mm < 0.0 {
            return Err(Error::invalid("corridor phantom dimensions must be > 0"));
        }
        if self.inner_radius_mm >= self.body_radius_mm {
            return Err(Error::invalid("corridor radius must be below the body radius"));
        }
        if self.depth_mm > self.corridor_length_mm {
            return Err(Error::invalid("planned depth exceeds corridor length"));
        }
        let a = self.medial_angle().to_radians();
        let end_x = self.entry_offset_mm - self.corridor_length_mm * a.sin();
        if end_x <= self.inner_radius_mm + self.shell_mm {
            return Err(Error::invalid("corridors would intersect at the midline"));
        }
        if [self.body_attenuation, self.shell_attenuation, self.corridor_attenuation]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::invalid("phantom attenuations must be > 0"));
        }
        Ok(())
    }
}

/// Generated scene.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: VoxelVolume,
    pub mesh: VertebraMesh,
    pub annotations: Vec<PedicleAnnotation>,
    /// Centre of the target vertebra, used to aim views and crops.
    pub centroid: Vec3,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhantomSpec::Box {
                size_mm,
                attenuation,
                voxel_mm,
                padding_mm,
            } => {
                if size_mm.iter().any(|s| !(*s > 0.0)) || !(*voxel_mm > 0.0) || *padding_mm < 0.0 || *attenuation < 0.0 {
                    return Err(Error::invalid("box phantom dimensions must be > 0"));
                }
                Ok(())
            }
            PhantomSpec::Sphere {
                radius_mm,
                attenuation,
                voxel_mm,
                padding_mm,
            } => {
                if !(*radius_mm > 0.0) || !(*voxel_mm > 0.0) || *padding_mm < 0.0 || *attenuation < 0.0 {
                    return Err(Error::invalid("sphere phantom dimensions must be > 0"));
                }
                Ok(())
            }
            PhantomSpec::CorridorVertebra(c) => c.validate(),
        }
    }

    /// Analytic signed distance of the solid whose surface the mesh models.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match self {
            PhantomSpec::Box { size_mm, .. } => {
                let h = Vec3::from(*size_mm) * 0.5;
                let q = p.abs() - h;
                q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
            }
            PhantomSpec::Sphere { radius_mm, .. } => p.norm() - radius_mm,
            PhantomSpec::CorridorVertebra(c) => [Side::Left, Side::Right]
                .iter()
                .map(|&s| {
                    let (e, a) = c.corridor(s);
                    capped_cylinder_sd(p, &e, &a, c.corridor_length_mm, c.inner_radius_mm)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn capped_cylinder_sd(p: &Vec3, start: &Vec3, axis: &Vec3, length: f64, radius: f64) -> f64 {
    let rel = p - start;
    let t = rel.dot(axis);
    let radial = (rel - axis * t).norm() - radius;
    let axial = (t - length / 2.0).abs() - length / 2.0;
    let outside = Vec3::new(radial.max(0.0), axial.max(0.0), 0.0).norm();
    outside + radial.max(axial).min(0.0)
}

/// Lattice of `voxel` spacing whose voxel faces fall on `lo` and which covers
/// `[lo - pad, hi + pad]`.
fn lattice(lo: Vec3, hi: Vec3, voxel: f64, pad: f64) -> ([usize; 3], Vec3) {
    let pad_n = (pad / voxel).ceil();
    let mut dims = [0usize; 3];
    let mut origin = Vec3::zeros();
    for k in 0..3 {
        let inner = ((hi[k] - lo[k]) / voxel - 1e-9).ceil().max(1.0);
        dims[k] = (inner + 2.0 * pad_n) as usize;
        origin[k] = lo[k] - pad_n * voxel + voxel / 2.0;
    }
    (dims, origin)
}

fn voxelize(dims: [usize; 3], voxel: f64, origin: Vec3, label_of: impl Fn(&Vec3) -> u8) -> Vec<u8> {
    let mut labels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = origin + Vec3::new(x as f64, y as f64, z as f64) * voxel;
                labels.push(label_of(&p));
            }
        }
    }
    labels
}

fn material(name: &str, attenuation_per_mm: f64) -> Material {
    // unit density; mass coefficient chosen to give the requested 1/mm value
    Material {
        name: name.into(),
        density_g_cm3: 1.0,
        mu_over_rho_cm2_g: attenuation_per_mm * 10.0,
    }
}

fn labelled_volume(dims: [usize; 3], voxel: f64, origin: Vec3, labels: Vec<u8>, table: &MaterialTable) -> Result<VoxelVolume> {
    let n = labels.len();
    let v = VoxelVolume::new(dims, Vec3::repeat(voxel), origin, vec![0.0; n], Some(labels))?;
    apply_materials(&v, table)
}

fn single_material(att: f64) -> Result<MaterialTable> {
    let mut t = MaterialTable::new();
    if att > 0.0 {
        t.insert(1, material("solid", att))?;
    }
    Ok(t)
}

pub fn build_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    match spec {
        PhantomSpec::Box {
            size_mm,
            attenuation,
            voxel_mm,
            padding_mm,
        } => {
            let h = Vec3::from(*size_mm) * 0.5;
            let (dims, origin) = lattice(-h, h, *voxel_mm, *padding_mm);
            let labels = voxelize(dims, *voxel_mm, origin, |p| u8::from(spec.signed_distance(p) < 0.0));
            let table = single_material(*attenuation)?;
            let volume = if *attenuation > 0.0 {
                labelled_volume(dims, *voxel_mm, origin, labels, &table)?
            } else {
                let n = labels.len();
                VoxelVolume::new(dims, Vec3::repeat(*voxel_mm), origin, vec![0.0; n], Some(labels))?
            };
            let level = default_level();
            let mesh = cuboid(-h, h)?.with_level(level);
            // one reference axis entering the centre of the posterior face
            let annotation = PedicleAnnotation {
                level,
                side: Side::Left,
                entry_mm: Vec3::new(0.0, -h.y, 0.0),
                axis: Vec3::y(),
                depth_mm: h.y,
                pedicle_region: None,
            };
            Ok(Phantom {
                volume,
                mesh,
                annotations: vec![annotation],
                centroid: Vec3::zeros(),
            })
        }
        PhantomSpec::Sphere {
            radius_mm,
            attenuation,
            voxel_mm,
            padding_mm,
        } => {
            let r = Vec3::repeat(*radius_mm);
            let (dims, origin) = lattice(-r, r, *voxel_mm, *padding_mm);
            let labels = voxelize(dims, *voxel_mm, origin, |p| u8::from(spec.signed_distance(p) < 0.0));
            let table = single_material(*attenuation)?;
            let volume = if *attenuation > 0.0 {
                labelled_volume(dims, *voxel_mm, origin, labels, &table)?
            } else {
                let n = labels.len();
                VoxelVolume::new(dims, Vec3::repeat(*voxel_mm), origin, vec![0.0; n], Some(labels))?
            };
            let level = default_level();
            let mesh = icosphere(Vec3::zeros(), *radius_mm, SPHERE_SUBDIVISIONS)?.with_level(level);
            let annotation = PedicleAnnotation {
                level,
                side: Side::Left,
                entry_mm: Vec3::new(0.0, -radius_mm, 0.0),
                axis: Vec3::y(),
                depth_mm: *radius_mm,
                pedicle_region: None,
            };
            Ok(Phantom {
                volume,
                mesh,
                annotations: vec![annotation],
                centroid: Vec3::zeros(),
            })
        }
        PhantomSpec::CorridorVertebra(c) => build_corridor(c),
    }
}

fn build_corridor(c: &CorridorSpec) -> Result<Phantom> {
    let sides = [Side::Left, Side::Right];
    let corridors: Vec<(Side, Vec3, Vec3)> = sides
        .iter()
        .map(|&s| {
            let (e, a) = c.corridor(s);
            (s, e, a)
        })
        .collect();

    let mut lo = Vec3::new(-c.body_radius_mm, -c.body_radius_mm, -c.body_radius_mm - c.body_half_height_mm);
    let mut hi = -lo;
    let outer = c.inner_radius_mm + c.shell_mm;
    for (_, e, a) in &corridors {
        for p in [*e, e + a * c.corridor_length_mm] {
            lo = lo.inf(&(p - Vec3::repeat(outer)));
            hi = hi.sup(&(p + Vec3::repeat(outer)));
        }
    }
    let (dims, origin) = lattice(lo, hi, c.voxel_mm, c.padding_mm);
    let body_h = c.body_half_height_mm;
    let labels = voxelize(dims, c.voxel_mm, origin, |p| {
        let mut best = 0u8;
        for (_, e, a) in &corridors {
            let sd = capped_cylinder_sd(p, e, a, c.corridor_length_mm, c.inner_radius_mm);
            if sd < 0.0 {
                return 3;
            }
            let shell = capped_cylinder_sd(p, &(e - a * c.shell_mm), a, c.corridor_length_mm + c.shell_mm, outer);
            if shell < 0.0 {
                best = 2;
            }
        }
        if best > 0 {
            return best;
        }
        let axial = p.z.clamp(-body_h, body_h);
        let d = (p - Vec3::new(0.0, 0.0, axial)).norm();
        u8::from(d < c.body_radius_mm)
    });
    let mut table = MaterialTable::new();
    table.insert(1, material("cancellous body", c.body_attenuation))?;
    table.insert(2, material("cortical shell", c.shell_attenuation))?;
    table.insert(3, material("pedicle corridor", c.corridor_attenuation))?;
    let volume = labelled_volume(dims, c.voxel_mm, origin, labels, &table)?;

    let parts = corridors
        .iter()
        .map(|(_, e, a)| cylinder(*e, *a, c.corridor_length_mm, c.inner_radius_mm, CORRIDOR_SEGMENTS))
        .collect::<Result<Vec<_>>>()?;
    let mesh = union_disjoint(&parts)?.with_level(c.level);
    let annotations = corridors
        .iter()
        .map(|&(side, e, a)| PedicleAnnotation {
            level: c.level,
            side,
            entry_mm: e,
            axis: a,
            depth_mm: c.depth_mm,
            pedicle_region: None,
        })
        .collect();
    Ok(Phantom {
        volume,
        mesh,
        annotations,
        centroid: Vec3::zeros(),
    })
}

/// Largest distance from the analytic surface over voxels on the inside of
/// the voxelized boundary.
pub fn max_surface_deviation(spec: &PhantomSpec, volume: &VoxelVolume) -> f64 {
    let [nx, ny, nz] = volume.dims();
    let inside = |x: usize, y: usize, z: usize| volume.label(x, y, z) != 0;
    let mut worst: f64 = 0.0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !inside(x, y, z) {
                    continue;
                }
                let boundary = [(-1i64, 0i64, 0i64), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
                    .iter()
                    .any(|&(dx, dy, dz)| {
                        let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        a < 0 || b < 0 || c < 0
                            || a >= nx as i64 || b >= ny as i64 || c >= nz as i64
                            || !inside(a as usize, b as usize, c as usize)
                    });
                if boundary {
                    worst = worst.max(spec.signed_distance(&volume.voxel_center(x, y, z)).abs());
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drr::ray_integral;
    use crate::planner::{filter_and_select, generate_candidates};

    fn box_spec() -> PhantomSpec {
        PhantomSpec::Box {
            size_mm: [100.0; 3],
            attenuation: 0.02,
            voxel_mm: 1.0,
            padding_mm: 4.0,
        }
    }

    #[test]
    fn box_line_integral() {
        let p = build_phantom(&box_spec()).unwrap();
        let o = Vec3::new(0.0, -700.0, 0.0);
        let i = ray_integral(&p.volume, &o, &Vec3::y(), 1000.0, 0.5);
        assert!((i - 2.0).abs() < 0.02, "{i}");
        assert_eq!(p.mesh.bounds(), (Vec3::repeat(-50.0), Vec3::repeat(50.0)));
        // box faces fall exactly on voxel faces
        let inside = p.volume.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(inside, 100 * 100 * 100);
    }

    #[test]
    fn sphere_centre_distance() {
        let spec = PhantomSpec::Sphere {
            radius_mm: 20.0,
            attenuation: 0.02,
            voxel_mm: 1.0,
            padding_mm: 2.0,
        };
        let p = build_phantom(&spec).unwrap();
        assert!((p.mesh.signed_distance(&Vec3::zeros()) + 20.0).abs() < 0.1);
    }

    #[test]
    fn corridor_phantom_is_consistent() {
        let spec = CorridorSpec::with_radius(4.0);
        let p = build_phantom(&PhantomSpec::CorridorVertebra(spec.clone())).unwrap();
        assert_eq!(p.annotations.len(), 2);
        for a in &p.annotations {
            assert!(p.mesh.contains(&a.trajectory().point_at(a.depth_mm / 2.0)));
            assert_eq!(p.volume.label_at(&a.trajectory().point_at(a.depth_mm / 2.0)), 3);
            let sd = p.mesh.signed_distance(&a.trajectory().point_at(10.0));
            assert!((sd + 4.0).abs() < 0.01);
        }
        // left corridor sits at -x and tilts toward +x
        let left = &p.annotations[0];
        assert_eq!(left.side, Side::Left);
        assert!(left.entry_mm.x < 0.0 && left.axis.x > 0.0);
        assert!(p.volume.labels().contains(&2) && p.volume.labels().contains(&1));
    }

    #[test]
    fn corridor_centreline_selected() {
        let p = build_phantom(&PhantomSpec::CorridorVertebra(CorridorSpec::with_radius(4.0))).unwrap();
        for a in &p.annotations {
            let cands = generate_candidates(a, 3.0, 0.75).unwrap();
            let t = filter_and_select(&cands, &p.mesh).unwrap().unwrap();
            assert!((t.entry - a.entry_mm).norm() < 0.5);
        }
        let narrow = build_phantom(&PhantomSpec::CorridorVertebra(CorridorSpec::with_radius(0.9))).unwrap();
        let cands = generate_candidates(&narrow.annotations[0], 3.0, 0.75).unwrap();
        assert_eq!(filter_and_select(&cands, &narrow.mesh).unwrap(), None);
    }

    #[test]
    fn jitter_is_seeded() {
        let spec = |seed| CorridorSpec {
            angle_jitter_deg: 3.0,
            seed,
            ..CorridorSpec::default()
        };
        assert_eq!(spec(5).corridor(Side::Left), spec(5).corridor(Side::Left));
        assert_ne!(spec(5).corridor(Side::Left), spec(6).corridor(Side::Left));
        let (_, a) = spec(9).corridor(Side::Right);
        let angle = a.x.abs().asin().to_degrees();
        assert!((12.0..=18.0).contains(&angle));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(build_phantom(&PhantomSpec::CorridorVertebra(CorridorSpec::with_radius(25.0))).is_err());
        let bad = PhantomSpec::Box {
            size_mm: [0.0, 1.0, 1.0],
            attenuation: 0.02,
            voxel_mm: 1.0,
            padding_mm: 0.0,
        };
        assert!(build_phantom(&bad).is_err());
    }

    #[test]
    fn voxelization_converges_linearly() {
        let spec = |voxel_mm| PhantomSpec::Sphere {
            radius_mm: 10.0,
            attenuation: 0.02,
            voxel_mm,
            padding_mm: 1.0,
        };
        let dev = |s: f64| max_surface_deviation(&spec(s), &build_phantom(&spec(s)).unwrap().volume);
        for s in [1.0, 0.5] {
            let ratio = dev(s) / dev(s / 2.0);
            assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "voxel {s}: ratio {ratio}");
        }
    }

    #[test]
    fn phantom_json_shape() {
        let j = serde_json::to_value(box_spec()).unwrap();
        assert_eq!(j["kind"], "box");
        let c: PhantomSpec = serde_json::from_str(r#"{"kind":"corridor_vertebra","inner_radius_mm":3.0}"#).unwrap();
        match c {
            PhantomSpec::CorridorVertebra(s) => {
                assert_eq!(s.inner_radius_mm, 3.0);
                assert_eq!(s.body_radius_mm, 20.0);
            }
            _ => panic!("wrong kind"),
        }
    }
}
