//! Atomic layout: a machine at the center of a ring of qubits, all at the
//! same height above the slab surface (the plane `z = 0`).

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Identifier of the generator used by [`gaussian_perturb`]; written into
/// run metadata.
pub const RNG_ID: &str =
    "ChaCha8Rng (rand_chacha 0.9) seeded via seed_from_u64, Normal (rand_distr 0.5)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteKind {
    Machine,
    /// 1-based qubit index.
    Qubit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSite {
    /// Meters.
    pub position: Vec3,
    pub dipole_direction: Vec3,
    /// C·m.
    pub dipole_magnitude: f64,
    pub kind: SiteKind,
}

impl AtomSite {
    pub fn dipole(&self) -> Vec3 {
        self.dipole_direction * self.dipole_magnitude
    }
}

/// Site 0 is the machine; site `k` is qubit `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub sites: Vec<AtomSite>,
    /// Circle radius, meters.
    pub r: f64,
    /// Height above the slab, meters.
    pub z: f64,
}

impl Layout {
    pub fn n_q(&self) -> usize {
        self.sites.len() - 1
    }

    pub fn machine(&self) -> &AtomSite {
        &self.sites[0]
    }

    pub fn qubit(&self, k: usize) -> &AtomSite {
        &self.sites[k]
    }
}

pub fn circle_layout(n_q: usize, r: f64, z: f64, dipole_magnitude: f64) -> Result<Layout> {
    if n_q == 0 {
        return Err(Error::Parameter("a layout needs at least one qubit".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Parameter(format!(
            "circle radius must be positive, got {r}"
        )));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Parameter(format!(
            "slab distance must be positive, got {z}"
        )));
    }
    let mut sites = Vec::with_capacity(n_q + 1);
    sites.push(AtomSite {
        position: Vec3::new(0.0, 0.0, z),
        dipole_direction: Vec3::x(),
        dipole_magnitude,
        kind: SiteKind::Machine,
    });
    for k in 1..=n_q {
        let angle = std::f64::consts::TAU * (k - 1) as f64 / n_q as f64;
        let (s, c) = angle.sin_cos();
        // exact zeros keep quarter-turn layouts exactly symmetric
        let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
        let (s, c) = (snap(s), snap(c));
        sites.push(AtomSite {
            position: Vec3::new(r * c, r * s, z),
            dipole_direction: Vec3::x(),
            dipole_magnitude,
            kind: SiteKind::Qubit(k),
        });
    }
    let mut layout = Layout { sites, r, z };
    aim_qubits(&mut layout)?;
    Ok(layout)
}

/// Points every qubit dipole at the machine's current position.
fn aim_qubits(layout: &mut Layout) -> Result<()> {
    let center = layout.sites[0].position;
    for site in layout.sites.iter_mut().skip(1) {
        let to_machine = center - site.position;
        let norm = to_machine.norm();
        if norm == 0.0 {
            return Err(Error::Geometry(format!(
                "{:?} coincides with the machine",
                site.kind
            )));
        }
        site.dipole_direction = to_machine / norm;
    }
    Ok(())
}

/// Local frame of an atom pair: `x` along the joining line, `z` the slab
/// normal made orthogonal to `x`, `y = z × x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFrame {
    pub separation: f64,
    pub basis: [Vec3; 3],
    /// Dipole vectors (C·m) of the two atoms expressed in the frame.
    pub dipole_a: Vec3,
    pub dipole_b: Vec3,
}

impl PairFrame {
    pub fn new(
        position_a: &Vec3,
        position_b: &Vec3,
        dipole_a: &Vec3,
        dipole_b: &Vec3,
    ) -> Result<Self> {
        let joining = position_b - position_a;
        let separation = joining.norm();
        if !(separation > 0.0) {
            return Err(Error::Geometry("coincident atomic positions".into()));
        }
        let x = joining / separation;
        let normal = Vec3::z();
        let mut z = normal - x * x.dot(&normal);
        if z.norm() < 1e-9 {
            // joining line along the slab normal; any perpendicular works
            z = Vec3::x() - x * x.dot(&Vec3::x());
        }
        let z = z.normalize();
        let y = z.cross(&x);
        let project = |d: &Vec3| Vec3::new(d.dot(&x), d.dot(&y), d.dot(&z));
        Ok(Self {
            separation,
            basis: [x, y, z],
            dipole_a: project(dipole_a),
            dipole_b: project(dipole_b),
        })
    }
}

pub fn pair_geometry(layout: &Layout, a: usize, b: usize) -> Result<PairFrame> {
    if a == b {
        return Err(Error::Geometry(format!(
            "pair geometry of site {a} with itself"
        )));
    }
    let n = layout.sites.len();
    if a >= n || b >= n {
        return Err(Error::Geometry(format!(
            "site index out of range ({a}, {b}) for {n} sites"
        )));
    }
    let (sa, sb) = (&layout.sites[a], &layout.sites[b]);
    PairFrame::new(&sa.position, &sb.position, &sa.dipole(), &sb.dipole())
}

/// Displaces every site in the slab plane by independent normal draws of
/// standard deviation `sigma` (meters), then re-aims the qubit dipoles at the
/// displaced machine. The machine dipole keeps its direction.
pub fn gaussian_perturb(layout: &Layout, sigma: f64, seed: u64) -> Result<Layout> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise width must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(layout.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = layout.clone();
    for site in &mut out.sites {
        site.position.x += normal.sample(&mut rng);
        site.position.y += normal.sample(&mut rng);
    }
    aim_qubits(&mut out)?;
    Ok(out)
}
