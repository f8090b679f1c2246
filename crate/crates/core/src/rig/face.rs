//! Procedural face surface over a planar parameter domain.
//!
//! Every quantity (surface position, identity modes, AU displacements) is a
//! continuous function of the planar coordinate, so two different samplings of
//! the domain share exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::vec3::{self, Vec3};

/// Half-width and half-height of the face outline in millimeters.
pub const HALF_WIDTH: f64 = 75.0;
pub const HALF_HEIGHT: f64 = 95.0;

pub const N_AU: usize = 53;
pub const N_IDENTITY: usize = 100;

/// Axis-aligned ellipse in the planar (x, y) domain, millimeters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub radii: [f64; 2],
}

impl Ellipse {
    pub const fn new(center: [f64; 2], radii: [f64; 2]) -> Self {
        Self { center, radii }
    }

    /// `< 1` inside, `1` on the curve.
    pub fn level(&self, p: [f64; 2]) -> f64 {
        let a = (p[0] - self.center[0]) / self.radii[0];
        let b = (p[1] - self.center[1]) / self.radii[1];
        a * a + b * b
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.level(p) < 1.0
    }

    /// Approximate distance to the curve along the ray from the center.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let l = self.level(p).sqrt();
        if l == 0.0 {
            return self.radii[0].min(self.radii[1]);
        }
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        (d[0] * d[0] + d[1] * d[1]).sqrt() * (1.0 - 1.0 / l).abs()
    }

    pub fn point(&self, theta: f64) -> [f64; 2] {
        [
            self.center[0] + self.radii[0] * theta.cos(),
            self.center[1] + self.radii[1] * theta.sin(),
        ]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.center, [self.radii[0] * s, self.radii[1] * s])
    }

    /// `n` points equally spaced in arc length, counter-clockwise.
    pub fn sample(&self, n: usize) -> Vec<[f64; 2]> {
        const FINE: usize = 4096;
        let mut cum = Vec::with_capacity(FINE + 1);
        cum.push(0.0);
        let mut prev = self.point(0.0);
        for i in 1..=FINE {
            let p = self.point(std::f64::consts::TAU * i as f64 / FINE as f64);
            let d = ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
            cum.push(cum[i - 1] + d);
            prev = p;
        }
        let total = cum[FINE];
        let mut out = Vec::with_capacity(n);
        let mut j = 0;
        for k in 0..n {
            let s = total * k as f64 / n as f64;
            while cum[j + 1] < s {
                j += 1;
            }
            let t = (s - cum[j]) / (cum[j + 1] - cum[j]);
            out.push(self.point(std::f64::consts::TAU * (j as f64 + t) / FINE as f64));
        }
        out
    }

    pub fn perimeter(&self) -> f64 {
        let (a, b) = (self.radii[0], self.radii[1]);
        let h = ((a - b) / (a + b)).powi(2);
        std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radii[0] * self.radii[1]
    }
}

pub const OUTLINE: Ellipse = Ellipse::new([0.0, 0.0], [HALF_WIDTH, HALF_HEIGHT]);
/// Subject's left eye sits at positive x.
pub const EYE_L: Ellipse = Ellipse::new([0.38 * HALF_WIDTH, 0.22 * HALF_HEIGHT], [0.13 * HALF_WIDTH, 0.06 * HALF_HEIGHT]);
pub const EYE_R: Ellipse = Ellipse::new([-0.38 * HALF_WIDTH, 0.22 * HALF_HEIGHT], [0.13 * HALF_WIDTH, 0.06 * HALF_HEIGHT]);
pub const MOUTH: Ellipse = Ellipse::new([0.0, -0.45 * HALF_HEIGHT], [0.2 * HALF_WIDTH, 0.035 * HALF_HEIGHT]);

/// Height of the face surface above the planar point `p` (mm).
pub fn depth(p: [f64; 2]) -> f64 {
    let u = p[0] / HALF_WIDTH;
    let v = p[1] / HALF_HEIGHT;
    let g = |a: f64, b: f64| (-0.5 * (a * a + b * b)).exp();
    let pair = |cu: f64, cv: f64, su: f64, sv: f64| g((u - cu) / su, (v - cv) / sv) + g((u + cu) / su, (v - cv) / sv);
    let base = 70.0 * ((1.0 - 0.8 * (u * u + 0.6 * v * v)).max(0.0).sqrt() - 1.0);
    let nose = 20.0 * g(u / 0.09, (v + 0.05) / 0.2) + 6.0 * g(u / 0.07, (v + 0.2) / 0.07);
    let brow = 5.0 * (-0.5 * ((v - 0.38) / 0.07).powi(2)).exp() * (-(u / 0.5).powi(4)).exp();
    let sockets = -7.0 * pair(0.38, 0.22, 0.12, 0.08);
    let cheeks = 5.0 * pair(0.38, -0.12, 0.15, 0.15);
    let lips = 5.0 * g(u / 0.2, (v + 0.45) / 0.08);
    let chin = 7.0 * g(u / 0.17, (v + 0.8) / 0.1);
    base + nose + brow + sockets + cheeks + lips + chin
}

pub fn surface(p: [f64; 2]) -> Vec3<f64> {
    [p[0], p[1], depth(p)]
}

/// One localized AU displacement: `w(d) * (direction + radial * (p - center))`
/// with `w(d) = (1 - d^2)^2` inside the ellipse and zero outside.
#[derive(Clone, Copy, Debug)]
pub struct AuShape {
    pub region: Ellipse,
    pub direction: Vec3<f64>,
    /// Scaling about the region center in the x-y plane, mm per mm.
    pub radial: f64,
}

impl AuShape {
    pub fn displacement(&self, p: [f64; 2]) -> Vec3<f64> {
        let d2 = self.region.level(p);
        if d2 >= 1.0 {
            return [0.0; 3];
        }
        let w = (1.0 - d2) * (1.0 - d2);
        let r = [
            self.radial * (p[0] - self.region.center[0]),
            self.radial * (p[1] - self.region.center[1]),
            0.0,
        ];
        vec3::scale(vec3::add(self.direction, r), w)
    }
}

/// Left-side (or midline) AU definitions in normalized units:
/// (name, center u, center v, radius u, radius v, dx, dy, dz, radial).
type AuRow = (&'static str, f64, f64, f64, f64, f64, f64, f64, f64);

const AU_TABLE: [AuRow; 32] = [
    ("browInnerUp", 0.13, 0.42, 0.24, 0.18, 0.0, 6.0, 1.0, 0.0),
    ("browDown", 0.28, 0.38, 0.33, 0.18, -1.5, -5.0, -1.0, 0.0),
    ("browOuterUp", 0.45, 0.4, 0.27, 0.18, 0.0, 6.0, 0.0, 0.0),
    ("cheekPuff", 0.4, -0.3, 0.2, 0.18, 3.0, 0.0, 6.0, 0.0),
    ("cheekSquint", 0.38, 0.05, 0.27, 0.15, 0.0, 4.0, 2.0, 0.0),
    ("eyeBlink", 0.38, 0.29, 0.2835, 0.1418, 0.0, -7.0, 1.0, 0.0),
    ("eyeLookDown", 0.38, 0.16, 0.2633, 0.1013, 0.0, -3.0, 0.0, 0.0),
    ("eyeLookIn", 0.27, 0.22, 0.1418, 0.2025, -3.0, 0.0, 0.0, 0.0),
    ("eyeLookOut", 0.5, 0.22, 0.1418, 0.2025, 3.0, 0.0, 0.0, 0.0),
    ("eyeLookUp", 0.38, 0.33, 0.2835, 0.1215, 0.0, 2.5725, 1.5435, 0.0),
    ("eyeSquint", 0.38, 0.14, 0.3038, 0.1215, 0.0, 3.0, 1.0, 0.0),
    ("eyeWide", 0.4, 0.31, 0.255, 0.105, 0.0, 4.0, -1.5, 0.0),
    ("jawForward", 0.0, -0.72, 0.45, 0.28, 0.0, 0.0, 5.0, 0.0),
    ("jawLeft", 0.1, -0.72, 0.45, 0.28, 5.0, -1.0, 0.0, 0.0),
    ("jawOpen", 0.0, -0.7, 0.55, 0.32, 0.0, -10.0, -3.0, 0.0),
    ("jawRight", -0.1, -0.72, 0.45, 0.28, -5.0, -1.0, 0.0, 0.0),
    ("mouthClose", 0.0, -0.52, 0.3, 0.105, 0.0, 3.0, 0.0, 0.0),
    ("mouthDimple", 0.27, -0.47, 0.162, 0.162, 1.5435, 0.0, -2.5725, 0.0),
    ("mouthFrown", 0.22, -0.52, 0.2025, 0.2025, 0.0, -4.0, 0.0, 0.0),
    ("mouthFunnel", 0.0, -0.45, 0.33, 0.18, 0.0, 0.0, 4.0, 0.15),
    ("mouthLeft", 0.05, -0.47, 0.45, 0.18, 5.0, 0.8, 0.0, 0.0),
    ("mouthLowerDown", 0.1, -0.53, 0.243, 0.162, 0.0, -4.0, 1.0, 0.0),
    ("mouthPress", 0.1, -0.46, 0.243, 0.1215, 0.0, 0.0, -3.0, 0.0),
    ("mouthPucker", 0.0, -0.45, 0.39, 0.15, 0.0, 0.0, 3.0, -0.25),
    ("mouthRight", -0.05, -0.47, 0.45, 0.18, -5.0, 0.8, 0.0, 0.0),
    ("mouthRollLower", 0.0, -0.54, 0.3, 0.09, 0.0, 1.5, -3.5, 0.0),
    ("mouthRollUpper", 0.0, -0.38, 0.3, 0.09, 0.0, -1.5, -3.5, 0.0),
    ("mouthShrugLower", 0.0, -0.6, 0.3, 0.15, 0.0, 3.0, 2.0, 0.0),
    ("mouthShrugUpper", 0.0, -0.36, 0.3, 0.105, 0.0, 2.5725, 1.5435, 0.0),
    ("mouthSmile", 0.24, -0.42, 0.18, 0.18, 3.0, 5.0, -1.0, 0.0),
    ("mouthStretch", 0.25, -0.48, 0.2228, 0.2025, 4.0, -2.0, -1.0, 0.0),
    ("mouthUpperUp", 0.1, -0.38, 0.243, 0.1418, 0.0, 4.0, 1.0, 0.0),
];

const NOSE_SNEER: AuRow = ("noseSneer", 0.1, 0.0, 0.15, 0.18, 0.0, 3.0, 1.5, 0.0);

/// Names without a left/right pair.
const MIDLINE: [&str; 13] = [
    "jawForward",
    "jawLeft",
    "jawOpen",
    "jawRight",
    "mouthClose",
    "mouthFunnel",
    "mouthLeft",
    "mouthPucker",
    "mouthRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
];

fn row_shape(row: &AuRow, mirror: bool) -> AuShape {
    let &(_, cu, cv, ru, rv, dx, dy, dz, radial) = row;
    let s = if mirror { -1.0 } else { 1.0 };
    AuShape {
        region: Ellipse::new([s * cu * HALF_WIDTH, cv * HALF_HEIGHT], [ru * HALF_WIDTH, rv * HALF_HEIGHT]),
        direction: [s * dx, dy, dz],
        radial,
    }
}

/// The 53 AU names in rig order and their shapes.
pub fn au_names() -> Vec<String> {
    au_table().into_iter().map(|(n, _)| n).collect()
}

pub fn au_table() -> Vec<(String, AuShape)> {
    let mut out = Vec::with_capacity(N_AU);
    for row in AU_TABLE.iter().chain(std::iter::once(&NOSE_SNEER)) {
        let name = row.0;
        if MIDLINE.contains(&name) {
            out.push((name.to_string(), row_shape(row, false)));
        } else {
            out.push((format!("{name}_L"), row_shape(row, false)));
            out.push((format!("{name}_R"), row_shape(row, true)));
        }
    }
    debug_assert_eq!(out.len(), N_AU);
    out
}

/// Smooth identity mode: `direction * cos(a (u + 1) pi / 2 + p) * cos(b (v + 1) pi / 2 + q)`.
#[derive(Clone, Copy, Debug)]
pub struct IdentityMode {
    pub frequency: [f64; 2],
    pub phase: [f64; 2],
    pub direction: Vec3<f64>,
}

impl IdentityMode {
    pub fn displacement(&self, p: [f64; 2]) -> Vec3<f64> {
        let u = p[0] / HALF_WIDTH;
        let v = p[1] / HALF_HEIGHT;
        let h = std::f64::consts::FRAC_PI_2;
        let s = (self.frequency[0] * (u + 1.0) * h + self.phase[0]).cos()
            * (self.frequency[1] * (v + 1.0) * h + self.phase[1]).cos();
        vec3::scale(self.direction, s)
    }
}

/// Per-vertex RMS displacement of identity mode `j` (mm).
pub fn identity_rms(j: usize) -> f64 {
    2.5 * (-(j as f64) / 12.0).exp()
}

pub fn identity_modes(seed: u64) -> Vec<IdentityMode> {
    let mut freqs: Vec<[usize; 2]> = (0..12)
        .flat_map(|a| (0..12).map(move |b| [a, b]))
        .filter(|f| f != &[0, 0])
        .collect();
    freqs.sort_by_key(|f| (f[0] * f[0] + f[1] * f[1], f[0]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D_E7_17_u64);
    freqs
        .into_iter()
        .take(N_IDENTITY)
        .map(|f| {
            let dir = loop {
                let d: Vec3<f64> = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                if let Some(n) = vec3::normalize(d).filter(|_| vec3::norm(d) > 0.2) {
                    break n;
                }
            };
            IdentityMode {
                frequency: [f[0] as f64, f[1] as f64],
                phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
                direction: dir,
            }
        })
        .collect()
}

/// Planar sampling and triangulation of the face domain.
#[derive(Clone, Debug)]
pub struct PlanarMesh {
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

fn holes(closed_eyes: bool) -> Vec<Ellipse> {
    if closed_eyes {
        vec![MOUTH]
    } else {
        vec![EYE_L, EYE_R, MOUTH]
    }
}

pub fn in_domain(p: [f64; 2], closed_eyes: bool) -> bool {
    OUTLINE.contains(p) && holes(closed_eyes).iter().all(|h| !h.contains(p))
}

/// Exactly `n` points: boundary polygons first (outline, left eye, right eye,
/// mouth), then interior points spread by best-candidate sampling and relaxed
/// with a few rounds of neighbor averaging.
pub fn sample_domain(n: usize, seed: u64, closed_eyes: bool) -> PlanarMesh {
    let curves = [OUTLINE, EYE_L, EYE_R, MOUTH];
    let area = OUTLINE.area() - EYE_L.area() - EYE_R.area() - MOUTH.area();
    let mut h = (area / (n as f64 * 0.866)).sqrt();
    // Boundary points reduce the interior budget; shrink h until it fits.
    let mut boundary: Vec<[f64; 2]>;
    loop {
        boundary = Vec::new();
        for c in &curves {
            let k = ((c.perimeter() / h).round() as usize).max(8);
            boundary.extend(c.sample(k));
        }
        if boundary.len() * 4 < n {
            break;
        }
        h *= 1.25;
    }
    let interior = n - boundary.len();
    let curve_distance = |p: [f64; 2]| curves.iter().map(|c| c.distance(p)).fold(f64::INFINITY, f64::min);
    let domain_ok = |p: [f64; 2], clearance: f64| in_domain(p, closed_eyes) && curve_distance(p) > clearance * h;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = SpatialGrid::new(h);
    for (i, p) in boundary.iter().enumerate() {
        grid.insert(*p, i);
    }
    let mut points = boundary.clone();
    let mut rejected = 0usize;
    while points.len() < n {
        let mut best: Option<([f64; 2], f64)> = None;
        for _ in 0..12 {
            let p = [rng.random_range(-HALF_WIDTH..HALF_WIDTH), rng.random_range(-HALF_HEIGHT..HALF_HEIGHT)];
            if !domain_ok(p, 0.5) {
                continue;
            }
            let d = grid.nearest(p, &points).min(2.0 * h);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((p, d));
            }
        }
        match best {
            Some((p, _)) => {
                grid.insert(p, points.len());
                points.push(p);
            }
            None => {
                rejected += 1;
                assert!(rejected < 1_000_000, "face domain sampling failed");
            }
        }
    }
    debug_assert_eq!(points.len() - boundary.len(), interior);

    let b = boundary.len();
    let mut tris = triangulate(&points, &curves, closed_eyes);
    for _ in 0..3 {
        let mut nbr: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
        for t in &tris {
            for k in 0..3 {
                nbr[t[k]].push(t[(k + 1) % 3]);
                nbr[t[k]].push(t[(k + 2) % 3]);
            }
        }
        let mut moved = points.clone();
        for i in b..points.len() {
            if nbr[i].is_empty() {
                continue;
            }
            let mut c = [0.0, 0.0];
            for &j in &nbr[i] {
                c[0] += points[j][0];
                c[1] += points[j][1];
            }
            c[0] /= nbr[i].len() as f64;
            c[1] /= nbr[i].len() as f64;
            if domain_ok(c, 0.35) {
                moved[i] = c;
            }
        }
        points = moved;
        tris = triangulate(&points, &curves, closed_eyes);
    }
    PlanarMesh { points, triangles: tris }
}

/// Constrained Delaunay triangulation with the boundary curves as constraints;
/// triangles in holes or outside the outline are dropped. Output is
/// counter-clockwise in the x-y plane.
fn triangulate(points: &[[f64; 2]], curves: &[Ellipse], closed_eyes: bool) -> Vec<[usize; 3]> {
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let handles: Vec<_> = points
        .iter()
        .map(|p| cdt.insert(Point2::new(p[0], p[1])).expect("finite point"))
        .collect();
    assert_eq!(cdt.num_vertices(), points.len(), "duplicate sample point");
    // Boundary points were emitted curve by curve; recover the runs.
    let mut start = 0;
    for c in curves {
        let mut end = start;
        while end < points.len() && (c.level(points[end]) - 1.0).abs() < 1e-9 {
            end += 1;
        }
        for i in start..end {
            let j = if i + 1 == end { start } else { i + 1 };
            cdt.add_constraint(handles[i], handles[j]);
        }
        start = end;
    }
    let index_of: std::collections::HashMap<_, usize> = handles.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    let mut tris = Vec::new();
    for f in cdt.inner_faces() {
        let vs = f.vertices().map(|v| index_of[&v.fix()]);
        let p = vs.map(|i| points[i]);
        let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        if !in_domain(c, closed_eyes) {
            continue;
        }
        let signed = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        if signed > 0.0 {
            tris.push(vs);
        } else {
            tris.push([vs[0], vs[2], vs[1]]);
        }
    }
    tris.sort_unstable();
    tris
}

struct SpatialGrid {
    cell: f64,
    cells: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: std::collections::HashMap::new(),
        }
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: [f64; 2], i: usize) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(i);
    }

    /// Distance to the nearest stored point within two cells, or infinity.
    fn nearest(&self, p: [f64; 2], points: &[[f64; 2]]) -> f64 {
        let (kx, ky) = self.key(p);
        let mut best = f64::INFINITY;
        for dx in -2..=2 {
            for dy in -2..=2 {
                if let Some(ids) = self.cells.get(&(kx + dx, ky + dy)) {
                    for &i in ids {
                        let q = points[i];
                        best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_53_unique_names_starting_with_inner_brow() {
        let t = au_table();
        assert_eq!(t.len(), 53);
        assert_eq!(t[0].0, "browInnerUp_L");
        let mut names: Vec<_> = t.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 53);
    }

    #[test]
    fn sampling_hits_exact_count() {
        for n in [500, 1234] {
            let m = sample_domain(n, 7, false);
            assert_eq!(m.points.len(), n);
            assert!(m.triangles.len() > n);
        }
    }

    #[test]
    fn ellipse_samples_lie_on_curve() {
        for p in EYE_L.sample(40) {
            assert!((EYE_L.level(p) - 1.0).abs() < 1e-9);
        }
    }
}
