//! Voxel volumes standing in for preprocessed CT: loading, resampling with
//! trilinear interpolation and Gaussian smoothing, and material assignment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Gridded attenuation (1/mm) plus a label grid, x-fastest ordering.
///
/// `origin` is the world position of the centre of voxel (0,0,0).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    values: Vec<f32>,
    labels: Vec<u8>,
}

impl VoxelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: Vec3,
        origin: Vec3,
        values: Vec<f32>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "volume spacing must be positive, got {:?}",
                spacing.as_slice()
            )));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("volume origin must be finite"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidValue { index });
        }
        let labels = match labels {
            Some(l) if l.len() != n => {
                return Err(Error::SizeMismatch {
                    expected: n,
                    actual: l.len(),
                })
            }
            Some(l) => l,
            None => vec![0; n],
        };
        Ok(Self {
            dims,
            spacing,
            origin,
            values,
            labels,
        })
    }

    /// A volume filled with `value` and label 0.
    pub fn constant(dims: [usize; 3], spacing: Vec3, origin: Vec3, value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, origin, vec![value; n], None)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn value(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    pub fn label(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    /// World position of a voxel centre.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64).component_mul(&self.spacing)
    }

    /// Axis-aligned world bounds covering the full extent of every voxel.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let half = self.spacing * 0.5;
        let last = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        );
        (
            self.origin - half,
            self.origin + last.component_mul(&self.spacing) + half,
        )
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.min()
    }

    /// Trilinear sample at a continuous voxel index. Coordinates are clamped
    /// to the centre lattice, so the outer half voxel repeats the edge value.
    pub fn sample_index(&self, ix: f64, iy: f64, iz: f64) -> f64 {
        let (x0, fx) = split_index(ix, self.dims[0]);
        let (y0, fy) = split_index(iy, self.dims[1]);
        let (z0, fz) = split_index(iz, self.dims[2]);
        let x1 = (x0 + 1).min(self.dims[0] - 1);
        let y1 = (y0 + 1).min(self.dims[1] - 1);
        let z1 = (z0 + 1).min(self.dims[2] - 1);
        let v = |x, y, z| self.values[self.index(x, y, z)] as f64;
        let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), fx);
        let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), fx);
        let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), fx);
        let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    /// Trilinear sample at a world point; zero outside [`bounds`](Self::bounds).
    pub fn sample_world(&self, p: &Vec3) -> f64 {
        let (lo, hi) = self.bounds();
        if (0..3).any(|k| p[k] < lo[k] || p[k] > hi[k]) {
            return 0.0;
        }
        let c = (p - self.origin).component_div(&self.spacing);
        self.sample_index(c.x, c.y, c.z)
    }

    /// Nearest label at a world point; 0 outside the volume.
    pub fn label_at(&self, p: &Vec3) -> u8 {
        let c = (p - self.origin).component_div(&self.spacing);
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let r = c[k].round();
            if r < 0.0 || r > (self.dims[k] - 1) as f64 {
                return 0;
            }
            idx[k] = r as usize;
        }
        self.label(idx[0], idx[1], idx[2])
    }

    pub(crate) fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Self::new(
            self.dims,
            self.spacing,
            self.origin,
            values,
            Some(self.labels.clone()),
        )
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[inline]
fn split_index(i: f64, n: usize) -> (usize, f64) {
    let max = (n - 1) as f64;
    let c = i.clamp(0.0, max);
    let i0 = c.floor();
    let i0u = (i0 as usize).min(n - 1);
    (i0u, c - i0)
}

/// On-disk header describing a volume and its raw payload files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_json<T: serde::de::DeserializeOwned>(
    what: &'static str,
    path: &Path,
    bytes: &[u8],
) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        what,
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn sibling(header: &Path, rel: &str) -> PathBuf {
    header.parent().unwrap_or_else(|| Path::new(".")).join(rel)
}

/// Loads a volume from a header file with adjacent raw data.
pub fn load_volume(path: impl AsRef<Path>) -> Result<VoxelVolume> {
    let path = path.as_ref();
    let header: VolumeHeader = parse_json("volume header", path, &read_file(path)?)?;
    if header.dtype != "f32" {
        return Err(Error::Parse {
            what: "volume header",
            path: path.to_path_buf(),
            message: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let n: usize = header.dims.iter().product();
    let raw = read_file(&sibling(path, &header.data))?;
    if raw.len() % 4 != 0 || raw.len() / 4 != n {
        return Err(Error::SizeMismatch {
            expected: n,
            actual: raw.len() / 4,
        });
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let labels = match &header.labels {
        Some(rel) => {
            let l = read_file(&sibling(path, rel))?;
            if l.len() != n {
                return Err(Error::SizeMismatch {
                    expected: n,
                    actual: l.len(),
                });
            }
            Some(l)
        }
        None => None,
    };
    VoxelVolume::new(
        header.dims,
        Vec3::from(header.spacing_mm),
        Vec3::from(header.origin_mm),
        values,
        labels,
    )
}

/// Writes `<stem>.json`-style header at `path` plus `<stem>.raw` and
/// `<stem>.labels` next to it.
pub fn write_volume(v: &VoxelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad header path {}", path.display())))?;
    let data_name = format!("{stem}.raw");
    let label_name = format!("{stem}.labels");
    let header = VolumeHeader {
        dims: v.dims,
        spacing_mm: v.spacing.into(),
        origin_mm: v.origin.into(),
        dtype: "f32".into(),
        data: data_name.clone(),
        labels: Some(label_name.clone()),
    };
    let mut raw = Vec::with_capacity(v.values.len() * 4);
    for x in &v.values {
        raw.extend_from_slice(&x.to_le_bytes());
    }
    let write = |p: PathBuf, bytes: &[u8]| fs::write(&p, bytes).map_err(|e| Error::io(p, e));
    write(sibling(path, &data_name), &raw)?;
    write(sibling(path, &label_name), &v.labels)?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write(path.to_path_buf(), text.as_bytes())
}

/// Upsamples by an integer factor per axis, trilinearly interpolating values
/// and nearest-neighbour upsampling labels, then applies Gaussian smoothing
/// with standard deviation `sigma_mm`.
pub fn resample_volume(v: &VoxelVolume, factor: usize, sigma_mm: f64) -> Result<VoxelVolume> {
    if factor == 0 {
        return Err(Error::invalid("resample factor must be >= 1"));
    }
    if !(sigma_mm >= 0.0 && sigma_mm.is_finite()) {
        return Err(Error::invalid(format!("smoothing sigma must be >= 0, got {sigma_mm}")));
    }
    let upsampled = if factor == 1 {
        v.clone()
    } else {
        let f = factor as f64;
        let dims = [v.dims[0] * factor, v.dims[1] * factor, v.dims[2] * factor];
        let spacing = v.spacing / f;
        // keep the physical extent: first new centre sits half a new voxel in
        let origin = v.origin - v.spacing * 0.5 + spacing * 0.5;
        let n = dims[0] * dims[1] * dims[2];
        let mut values = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let to_old = |j: usize| -0.5 + (j as f64 + 0.5) / f;
        for z in 0..dims[2] {
            let iz = to_old(z);
            for y in 0..dims[1] {
                let iy = to_old(y);
                for x in 0..dims[0] {
                    values.push(v.sample_index(to_old(x), iy, iz) as f32);
                    labels.push(v.label(x / factor, y / factor, z / factor));
                }
            }
        }
        VoxelVolume::new(dims, spacing, origin, values, Some(labels))?
    };
    if sigma_mm == 0.0 {
        return Ok(upsampled);
    }
    let smoothed = gaussian_smooth(&upsampled, sigma_mm);
    upsampled.with_values(smoothed)
}

/// Normalised 1-D Gaussian kernel sampled at multiples of `spacing`, radius
/// `ceil(3 sigma / spacing)`.
pub fn gaussian_kernel(sigma_mm: f64, spacing: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_mm / spacing).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| {
            let d = i as f64 * spacing;
            (-(d * d) / (2.0 * sigma_mm * sigma_mm)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

#[inline]
fn reflect(mut i: isize, n: isize) -> usize {
    // d c b a | a b c d | d c b a
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_smooth(v: &VoxelVolume, sigma_mm: f64) -> Vec<f32> {
    let mut data: Vec<f64> = v.values.iter().map(|&x| x as f64).collect();
    let dims = v.dims;
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm, v.spacing[axis]);
        if kernel.len() == 1 {
            continue;
        }
        let radius = (kernel.len() / 2) as isize;
        let n = dims[axis] as isize;
        let stride = strides[axis];
        let mut out = vec![0.0; data.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let pos = ((idx / stride) % dims[axis]) as isize;
            let base = idx - pos as usize * stride;
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = reflect(pos + k as isize - radius, n);
                acc += w * data[base + j * stride];
            }
            *o = acc;
        }
        data = out;
    }
    data.into_iter().map(|x| x.max(0.0) as f32).collect()
}

/// One material entry; `mu_over_rho_cm2_g` is the mass attenuation
/// coefficient at the effective beam energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub density_g_cm3: f64,
    pub mu_over_rho_cm2_g: f64,
}

impl Material {
    /// Linear attenuation in 1/mm.
    pub fn attenuation_per_mm(&self) -> f64 {
        self.density_g_cm3 * self.mu_over_rho_cm2_g * 0.1
    }
}

/// Label id to material mapping. Label 0 is background and always zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialTable {
    entries: BTreeMap<u8, Material>,
}

impl MaterialTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: u8, material: Material) -> Result<()> {
        if !(material.density_g_cm3 > 0.0 && material.density_g_cm3.is_finite()) {
            return Err(Error::invalid(format!(
                "material {:?}: density must be > 0",
                material.name
            )));
        }
        if !(material.mu_over_rho_cm2_g > 0.0 && material.mu_over_rho_cm2_g.is_finite()) {
            return Err(Error::invalid(format!(
                "material {:?}: attenuation coefficient must be > 0",
                material.name
            )));
        }
        self.entries.insert(label, material);
        Ok(())
    }

    pub fn get(&self, label: u8) -> Option<&Material> {
        self.entries.get(&label)
    }

    pub fn attenuation(&self, label: u8) -> Option<f64> {
        if label == 0 {
            return Some(0.0);
        }
        self.entries.get(&label).map(Material::attenuation_per_mm)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw: BTreeMap<u8, Material> = parse_json("material table", path, &read_file(path)?)?;
        let mut table = Self::new();
        for (label, m) in raw {
            table.insert(label, m)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("table serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Replaces every voxel value with the attenuation of its label's material.
pub fn apply_materials(v: &VoxelVolume, table: &MaterialTable) -> Result<VoxelVolume> {
    let mut lut = [None; 256];
    for (label, slot) in lut.iter_mut().enumerate() {
        *slot = table.attenuation(label as u8).map(|a| a as f32);
    }
    let values = v
        .labels
        .iter()
        .map(|&l| lut[l as usize].ok_or(Error::UnknownLabel(l)))
        .collect::<Result<Vec<_>>>()?;
    v.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Vec3 {
        Vec3::new(1.0, 1.0, 1.0)
    }

    #[test]
    fn constant_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let v = VoxelVolume::constant([2, 2, 2], unit(), Vec3::zeros(), 0.02).unwrap();
        let p = dir.path().join("c.json");
        write_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.len(), 8);
        assert!(back.values().iter().all(|&x| x == 0.02));
    }

    #[test]
    fn random_grid_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16 * 16 * 16;
        let values: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let v = VoxelVolume::new(
            [16, 16, 16],
            Vec3::new(0.7, 0.8, 1.3),
            Vec3::new(-3.0, 2.5, 0.125),
            values,
            Some(labels),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        let bits = |v: &VoxelVolume| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v), bits(&back));
        assert_eq!(v, back);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let header = VolumeHeader {
            dims: [10, 10, 10],
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
            dtype: "f32".into(),
            data: "d.raw".into(),
            labels: None,
        };
        fs::write(dir.path().join("d.raw"), vec![0u8; 999 * 4]).unwrap();
        let p = dir.path().join("h.json");
        fs::write(&p, serde_json::to_string(&header).unwrap()).unwrap();
        match load_volume(&p) {
            Err(Error::SizeMismatch { expected, actual }) => {
                assert_eq!((expected, actual), (1000, 999));
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_nonfinite_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_volume(dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
        let header = VolumeHeader {
            dims: [2, 1, 1],
            spacing_mm: [1.0; 3],
            origin_mm: [0.0; 3],
            dtype: "f32".into(),
            data: "d.raw".into(),
            labels: None,
        };
        let mut raw = Vec::new();
        raw.extend_from_slice(&1.0f32.to_le_bytes());
        raw.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(dir.path().join("d.raw"), raw).unwrap();
        let p = dir.path().join("h.json");
        fs::write(&p, serde_json::to_string(&header).unwrap()).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::InvalidValue { index: 1 })));
    }

    #[test]
    fn resample_constant_and_identity() {
        let v = VoxelVolume::constant([3, 4, 5], unit(), Vec3::zeros(), 0.02).unwrap();
        let r = resample_volume(&v, 2, 0.0).unwrap();
        assert_eq!(r.dims(), [6, 8, 10]);
        assert_eq!(r.spacing(), Vec3::new(0.5, 0.5, 0.5));
        assert!(r.values().iter().all(|&x| (x - 0.02).abs() < 1e-9));
        // smoothing a constant with reflecting boundaries keeps it constant
        let s = resample_volume(&v, 2, 0.8).unwrap();
        assert!(s.values().iter().all(|&x| (x - 0.02).abs() < 1e-7));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f32> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let v = VoxelVolume::new([3, 4, 5], Vec3::new(0.3, 0.7, 1.1), Vec3::new(0.1, 0.2, 0.3), vals, None)
            .unwrap();
        assert_eq!(resample_volume(&v, 1, 0.0).unwrap(), v);
    }

    #[test]
    fn resample_linear_ramp_matches_analytic() {
        // value = 0.01 * x_world at every voxel centre
        let dims = [8, 3, 3];
        let spacing = Vec3::new(1.5, 1.0, 1.0);
        let origin = Vec3::new(2.0, 0.0, 0.0);
        let mut vals = Vec::new();
        for _z in 0..3 {
            for _y in 0..3 {
                for x in 0..8 {
                    vals.push((0.01 * (origin.x + x as f64 * spacing.x)) as f32);
                }
            }
        }
        let v = VoxelVolume::new(dims, spacing, origin, vals, None).unwrap();
        let r = resample_volume(&v, 2, 0.0).unwrap();
        let first = origin.x;
        let last = origin.x + 7.0 * spacing.x;
        let mut checked = 0;
        for x in 0..r.dims()[0] {
            let c = r.voxel_center(x, 1, 1);
            if c.x < first || c.x > last {
                continue; // outside the centre lattice, clamped
            }
            let got = r.value(x, 1, 1) as f64;
            assert!((got - 0.01 * c.x).abs() < 1e-6, "x={} got {got}", c.x);
            checked += 1;
        }
        assert!(checked >= 12);
    }

    #[test]
    fn resample_labels_nearest() {
        let v = VoxelVolume::new(
            [2, 1, 1],
            unit(),
            Vec3::zeros(),
            vec![0.0, 1.0],
            Some(vec![3, 7]),
        )
        .unwrap();
        let r = resample_volume(&v, 3, 0.0).unwrap();
        assert_eq!(r.dims(), [6, 3, 3]);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..6 {
                    assert_eq!(r.label(x, y, z), if x < 3 { 3 } else { 7 });
                }
            }
        }
    }

    #[test]
    fn resample_rejects_bad_args() {
        let v = VoxelVolume::constant([2, 2, 2], unit(), Vec3::zeros(), 0.0).unwrap();
        assert!(resample_volume(&v, 0, 0.0).is_err());
        assert!(resample_volume(&v, 1, -0.1).is_err());
    }

    #[test]
    fn smoothing_matches_analytic_gaussian_of_impulse() {
        // an impulse smoothed by a separable Gaussian is the sampled 3-D Gaussian
        let n = 21;
        let mut vals = vec![0.0f32; n * n * n];
        let c = n / 2;
        vals[c + n * (c + n * c)] = 1.0;
        let v = VoxelVolume::new([n, n, n], unit(), Vec3::zeros(), vals, None).unwrap();
        let s = resample_volume(&v, 1, 1.5).unwrap();
        let k = gaussian_kernel(1.5, 1.0);
        let r = k.len() / 2;
        for (dx, dy, dz) in [(0usize, 0usize, 0usize), (1, 0, 0), (2, 1, 0), (3, 3, 2)] {
            let want = k[r + dx] * k[r + dy] * k[r + dz];
            let got = s.value(c + dx, c + dy, c + dz) as f64;
            assert!((got - want).abs() < 1e-7, "{got} vs {want}");
        }
        let total: f64 = s.values().iter().map(|&x| x as f64).sum();
        assert!((total - 1.0).abs() < 1e-5);
        // radius is ceil(3 sigma / spacing)
        assert_eq!(k.len(), 2 * 5 + 1);
    }

    #[test]
    fn trilinear_at_centres_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f32> = (0..4 * 5 * 6).map(|_| rng.random_range(0.0..2.0)).collect();
        let v = VoxelVolume::new([4, 5, 6], Vec3::new(0.5, 1.0, 2.0), Vec3::new(-1.0, 3.0, 0.0), vals, None)
            .unwrap();
        for z in 0..6 {
            for y in 0..5 {
                for x in 0..4 {
                    let p = v.voxel_center(x, y, z);
                    assert_eq!(v.sample_world(&p), v.value(x, y, z) as f64);
                }
            }
        }
    }

    fn bone_table() -> MaterialTable {
        let mut t = MaterialTable::new();
        t.insert(
            1,
            Material {
                name: "bone".into(),
                density_g_cm3: 1.9,
                mu_over_rho_cm2_g: 0.2,
            },
        )
        .unwrap();
        t
    }

    #[test]
    fn materials_assign_attenuation() {
        let v = VoxelVolume::new([2, 1, 1], unit(), Vec3::zeros(), vec![5.0, 5.0], Some(vec![1, 0]))
            .unwrap();
        let m = apply_materials(&v, &bone_table()).unwrap();
        assert!((m.values()[0] as f64 - 0.038).abs() < 1e-7);
        assert_eq!(m.values()[1], 0.0);
        assert_eq!(m.labels(), v.labels());
        // idempotent
        assert_eq!(apply_materials(&m, &bone_table()).unwrap(), m);
    }

    #[test]
    fn materials_background_and_unknown() {
        let v = VoxelVolume::new([2, 1, 1], unit(), Vec3::zeros(), vec![1.0, 2.0], None).unwrap();
        let m = apply_materials(&v, &MaterialTable::new()).unwrap();
        assert!(m.values().iter().all(|&x| x == 0.0));
        let v = VoxelVolume::new([1, 1, 1], unit(), Vec3::zeros(), vec![0.0], Some(vec![7])).unwrap();
        assert!(matches!(
            apply_materials(&v, &bone_table()),
            Err(Error::UnknownLabel(7))
        ));
    }

    #[test]
    fn material_table_validation_and_io() {
        let mut t = MaterialTable::new();
        let bad = Material {
            name: "x".into(),
            density_g_cm3: 0.0,
            mu_over_rho_cm2_g: 0.2,
        };
        assert!(t.insert(1, bad).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        bone_table().save(&p).unwrap();
        assert_eq!(MaterialTable::load(&p).unwrap(), bone_table());
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(VoxelVolume::constant([0, 1, 1], unit(), Vec3::zeros(), 0.0).is_err());
        assert!(VoxelVolume::constant([1, 1, 1], Vec3::new(1.0, 0.0, 1.0), Vec3::zeros(), 0.0).is_err());
        assert!(VoxelVolume::new([1, 1, 1], unit(), Vec3::zeros(), vec![-1.0], None).is_err());
    }
}
