//! Procedural specimen volumes.
//!
//! Three caricature morphologies stand in for real scans: spheres with
//! radial spines, trochospiral chains of chambers, and tilted lenticular
//! disks with concentric layers. Every voxel of the specimen carries smooth
//! 3D texture plus fine grain, so neighbouring slices are never identical.
//! Specimens stay inside the cylinder inscribed in the xy footprint, so
//! in-plane rotations of any Z slice never clip them. A twisting two- and
//! three-lobed radial warp leaves no slice centrally or mirror symmetric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::volume_io::{Datatype, RawVoxels, Volume, VolumeHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Morphology {
    /// Sphere with conical spines.
    Spiny,
    /// Spiral of growing chambers rising along z.
    Spiral,
    /// Tilted lens with concentric layers.
    Layered,
}

impl Morphology {
    pub fn species(self) -> &'static str {
        match self {
            Morphology::Spiny => "Baculogypsina",
            Morphology::Spiral => "Lockhartia",
            Morphology::Layered => "Orbitoides",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub specimen_id: String,
    pub morphology: Morphology,
    pub seed: u64,
    /// `[nx, ny, nz]`.
    pub dims: [usize; 3],
}

impl PhantomSpec {
    pub fn new(specimen_id: impl Into<String>, morphology: Morphology, seed: u64) -> Self {
        Self {
            specimen_id: specimen_id.into(),
            morphology,
            seed,
            dims: [128, 128, 96],
        }
    }

    pub fn with_dims(mut self, dims: [usize; 3]) -> Self {
        self.dims = dims;
        self
    }
}

/// The standard five-specimen corpus: two same-class pairs and one
/// singleton.
pub fn standard_corpus() -> Vec<PhantomSpec> {
    vec![
        PhantomSpec::new("V1", Morphology::Spiny, 101),
        PhantomSpec::new("V2", Morphology::Spiral, 202),
        PhantomSpec::new("V3", Morphology::Layered, 303),
        PhantomSpec::new("V4", Morphology::Spiral, 404),
        PhantomSpec::new("V5", Morphology::Spiny, 505),
    ]
}

/// Amplitude of the per-voxel uniform grain.
const GRAIN: f64 = 0.04;

/// Trilinear value noise on a coarse random lattice.
struct ValueNoise {
    lattice: Vec<f32>,
    dims: [usize; 3],
    cell: f64,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, extent: [usize; 3], cell: f64) -> Self {
        let dims = extent.map(|e| (e as f64 / cell).ceil() as usize + 2);
        let lattice = (0..dims[0] * dims[1] * dims[2]).map(|_| rng.gen::<f32>()).collect();
        Self { lattice, dims, cell }
    }

    fn at(&self, x: f64, y: f64, z: f64) -> f64 {
        let p = [x / self.cell, y / self.cell, z / self.cell];
        let i = p.map(|v| v.floor().max(0.0) as usize);
        let f = [p[0] - i[0] as f64, p[1] - i[1] as f64, p[2] - i[2] as f64];
        let idx = |a: usize, b: usize, c: usize| {
            let a = a.min(self.dims[0] - 1);
            let b = b.min(self.dims[1] - 1);
            let c = c.min(self.dims[2] - 1);
            self.lattice[(c * self.dims[1] + b) * self.dims[0] + a] as f64
        };
        let mut acc = 0.0;
        for (dz, wz) in [(0, 1.0 - f[2]), (1, f[2])] {
            for (dy, wy) in [(0, 1.0 - f[1]), (1, f[1])] {
                for (dx, wx) in [(0, 1.0 - f[0]), (1, f[0])] {
                    acc += wx * wy * wz * idx(i[0] + dx, i[1] + dy, i[2] + dz);
                }
            }
        }
        acc
    }
}

/// Signed structure value at a point relative to the volume centre:
/// `None` outside the specimen, otherwise a base intensity in `[0, 1]`.
type ShapeFn = Box<dyn Fn(f64, f64, f64) -> Option<f64>>;

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

fn spiny(rng: &mut ChaCha8Rng, r_max: f64, half_depth: f64) -> ShapeFn {
    // Ellipsoidal core, yawed in the xy plane.
    let axes = [
        r_max * rng.gen_range(0.55..0.62),
        r_max * rng.gen_range(0.42..0.5),
        half_depth * rng.gen_range(0.7..0.8),
    ];
    let yaw = rng.gen_range(0.0..std::f64::consts::PI);
    let (cy, sy) = (yaw.cos(), yaw.sin());
    let spines: Vec<([f64; 3], f64, f64)> = (0..rng.gen_range(10..14))
        .map(|_| {
            let mut d = unit_vector(rng);
            d[2] *= 0.6;
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let d = d.map(|c| c / n);
            let len = r_max * rng.gen_range(0.8..0.98);
            let base = r_max * rng.gen_range(0.14..0.22);
            (d, len, base)
        })
        .collect();
    let canal = [rng.gen_range(-0.3..0.3) * axes[0], rng.gen_range(-0.3..0.3) * axes[1]];
    let start = axes[1] * 0.6;
    Box::new(move |x, y, z| {
        let (u, v) = (cy * x + sy * y, -sy * x + cy * y);
        let q = (u / axes[0]).powi(2) + (v / axes[1]).powi(2) + (z / axes[2]).powi(2);
        if q <= 1.0 {
            let inner = ((x - canal[0]).powi(2) + (y - canal[1]).powi(2)).sqrt() / axes[1];
            return Some(if inner < 0.45 { 0.45 } else { 0.8 });
        }
        for &(d, len, base) in &spines {
            let t = x * d[0] + y * d[1] + z * d[2];
            if t < start || t > len {
                continue;
            }
            let px = x - t * d[0];
            let py = y - t * d[1];
            let pz = z - t * d[2];
            let perp = (px * px + py * py + pz * pz).sqrt();
            if perp <= base * (len - t) / (len - start) {
                return Some(0.9);
            }
        }
        None
    })
}

fn spiral(rng: &mut ChaCha8Rng, r_max: f64, half_depth: f64) -> ShapeFn {
    let n = 10;
    let turn = rng.gen_range(0.8..1.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let growth = rng.gen_range(0.95..1.05);
    let chambers: Vec<([f64; 3], f64)> = (0..n)
        .map(|i| {
            let i = i as f64;
            let rho = r_max * growth * (0.08 + 0.055 * i);
            let r = r_max * growth * (0.18 + 0.03 * i);
            let phi = phase + turn * i;
            let z = half_depth * (-0.62 + 0.13 * i);
            ([rho * phi.cos(), rho * phi.sin(), z], r.min(r_max - rho))
        })
        .collect();
    Box::new(move |x, y, z| {
        let mut hit = None;
        for (k, (c, r)) in chambers.iter().enumerate() {
            let d = ((x - c[0]).powi(2) + (y - c[1]).powi(2) + ((z - c[2]) * 0.8).powi(2)).sqrt();
            if d <= *r {
                let wall = d > r - 2.0;
                let v = if wall { 0.85 } else { 0.35 + 0.03 * k as f64 };
                hit = Some(hit.map_or(v, |h: f64| h.max(v)));
            }
        }
        hit
    })
}

fn layered(rng: &mut ChaCha8Rng, r_max: f64, half_depth: f64) -> ShapeFn {
    let a = r_max * rng.gen_range(0.85..0.95);
    let b = r_max * rng.gen_range(0.6..0.7);
    let c = half_depth * rng.gen_range(0.75..0.85);
    let tilt = rng.gen_range(0.3..0.5f64);
    let (ct, st) = (tilt.cos(), tilt.sin());
    let nucleus = [a * 0.35, -b * 0.2, 0.0];
    let notch = rng.gen_range(0.0..std::f64::consts::TAU);
    Box::new(move |x, y, z| {
        // Tilt about the x axis.
        let (u, v, w) = (x, ct * y + st * z, -st * y + ct * z);
        let q = (u / a).powi(2) + (v / b).powi(2) + (w / c).powi(2);
        if q > 1.0 {
            return None;
        }
        let ang = v.atan2(u);
        if (ang - notch).rem_euclid(std::f64::consts::TAU) < 0.5 && q > 0.35 {
            return None;
        }
        let dn = ((u - nucleus[0]).powi(2) + (v - nucleus[1]).powi(2) + (w - nucleus[2]).powi(2)).sqrt();
        if dn < r_max * 0.15 {
            return Some(0.3);
        }
        let band = (q.sqrt() * 6.0).floor() as i32;
        Some(if band % 2 == 0 { 0.8 } else { 0.55 })
    })
}

/// In-plane radial scale `1 + a3 cos(3 phi + p3 + twist z) + a2 cos(2 phi + p2)`.
struct RadialWarp {
    a3: f64,
    p3: f64,
    twist: f64,
    a2: f64,
    p2: f64,
}

impl RadialWarp {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            a3: rng.gen_range(0.1..0.12),
            p3: rng.gen_range(0.0..std::f64::consts::TAU),
            twist: rng.gen_range(0.02..0.04) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            a2: rng.gen_range(0.06..0.08),
            p2: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn factor(&self, x: f64, y: f64, z: f64) -> f64 {
        let phi = y.atan2(x);
        1.0 + self.a3 * (3.0 * phi + self.p3 + self.twist * z).cos() + self.a2 * (2.0 * phi + self.p2).cos()
    }
}

/// Render a phantom into a u8 volume with unit voxel size.
pub fn generate(spec: &PhantomSpec) -> Volume {
    let [nx, ny, nz] = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Leaves room for the warp's largest factor, 1.2.
    let r_max = (nx.min(ny) as f64 / 2.0) * 0.8;
    let half_depth = nz as f64 / 2.0 * 0.9;
    let shape = match spec.morphology {
        Morphology::Spiny => spiny(&mut rng, r_max, half_depth),
        Morphology::Spiral => spiral(&mut rng, r_max, half_depth),
        Morphology::Layered => layered(&mut rng, r_max, half_depth),
    };
    let warp = RadialWarp::new(&mut rng);
    let noise = ValueNoise::new(&mut rng, spec.dims, 5.0 * nx.min(ny) as f64 / 64.0);
    let (cx, cy, cz) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0, (nz as f64 - 1.0) / 2.0);
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (px, py, pz) = (x as f64 - cx, y as f64 - cy, z as f64 - cz);
                let f = warp.factor(px, py, pz);
                let v = match shape(px / f, py / f, pz) {
                    Some(base) => {
                        let texture = 0.25 * (noise.at(x as f64, y as f64, z as f64) - 0.5);
                        let grain = rng.gen_range(-GRAIN..GRAIN);
                        (base + texture + grain).clamp(0.08, 1.0)
                    }
                    None => 0.0,
                };
                voxels.push((v * 255.0).round() as u8);
            }
        }
    }
    let header = VolumeHeader::new(spec.dims, Datatype::U8);
    Volume::from_raw(header, &RawVoxels::U8(voxels), spec.specimen_id.clone(), spec.morphology.species())
        .expect("voxel count matches header")
}

/// Solid sphere of radius `r` centred in an `n^3` u8 volume (255 inside).
pub fn sphere_volume(n: usize, r: f64) -> Volume {
    let c = (n as f64 - 1.0) / 2.0;
    let mut voxels = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
                voxels.push(if d2 <= r * r { 255 } else { 0 });
            }
        }
    }
    Volume::from_raw(
        VolumeHeader::new([n, n, n], Datatype::U8),
        &RawVoxels::U8(voxels),
        "sphere",
        "Baculogypsina",
    )
    .expect("voxel count matches header")
}
