//! Electrode layouts built from radially projected platonic solids.
//!
//! Each face of the solid becomes one plate on the tank wall. Plates are
//! inset from every shared edge by half the gap width, measured along the
//! sphere, so the plate boundaries are small-circle arcs parallel to the
//! original great-circle edges. Channel kinds are derived from the face
//! graph of the un-inset solid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const VERTEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solid {
    Tetrahedron,
    Cube,
    Octahedron,
    Dodecahedron,
    Icosahedron,
}

impl Solid {
    pub const ALL: [Solid; 5] = [
        Solid::Tetrahedron,
        Solid::Cube,
        Solid::Octahedron,
        Solid::Dodecahedron,
        Solid::Icosahedron,
    ];

    pub fn face_count(self) -> usize {
        match self {
            Solid::Tetrahedron => 4,
            Solid::Cube => 6,
            Solid::Octahedron => 8,
            Solid::Dodecahedron => 12,
            Solid::Icosahedron => 20,
        }
    }

    pub fn edge_count(self) -> usize {
        match self {
            Solid::Tetrahedron => 6,
            Solid::Cube | Solid::Octahedron => 12,
            Solid::Dodecahedron | Solid::Icosahedron => 30,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Solid::Tetrahedron => "tetrahedron",
            Solid::Cube => "cube",
            Solid::Octahedron => "octahedron",
            Solid::Dodecahedron => "dodecahedron",
            Solid::Icosahedron => "icosahedron",
        }
    }
}

impl fmt::Display for Solid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Solid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Solid::ALL
            .into_iter()
            .find(|solid| solid.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown solid `{s}`")))
    }
}

/// Size of the proper rotation group of the solid.
pub fn rotational_order(solid: Solid) -> usize {
    match solid {
        Solid::Tetrahedron => 12,
        Solid::Cube | Solid::Octahedron => 24,
        Solid::Dodecahedron | Solid::Icosahedron => 60,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Adjacent,
    SemiAdjacent,
    Cross,
    Opposite,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] = [
        ChannelKind::Adjacent,
        ChannelKind::SemiAdjacent,
        ChannelKind::Cross,
        ChannelKind::Opposite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Adjacent => "adjacent",
            ChannelKind::SemiAdjacent => "semi_adjacent",
            ChannelKind::Cross => "cross",
            ChannelKind::Opposite => "opposite",
        }
    }

    /// Plates share neither an edge nor a vertex.
    pub fn is_non_adjacent(self) -> bool {
        matches!(self, ChannelKind::Cross | ChannelKind::Opposite)
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown channel kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub transmit: usize,
    pub receive: usize,
    pub kind: ChannelKind,
}

/// Convex polyhedron with unit circumradius; faces wind counter-clockwise
/// seen from outside.
#[derive(Clone, Debug)]
pub struct Polyhedron {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Vec<usize>>,
}

impl Polyhedron {
    pub fn face_center(&self, face: usize) -> Vec3 {
        self.faces[face]
            .iter()
            .fold(Vec3::zeros(), |acc, &v| acc + self.vertices[v])
            .normalize()
    }

    pub fn rotated(&self, rot: &UnitQuaternion<f64>) -> Polyhedron {
        Polyhedron {
            vertices: self.vertices.iter().map(|v| rot * v).collect(),
            faces: self.faces.clone(),
        }
    }
}

fn golden() -> f64 {
    (1.0 + 5f64.sqrt()) / 2.0
}

fn cyclic(points: &[[f64; 3]]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(points.len() * 3);
    for p in points {
        out.push(Vec3::new(p[0], p[1], p[2]));
        out.push(Vec3::new(p[2], p[0], p[1]));
        out.push(Vec3::new(p[1], p[2], p[0]));
    }
    out
}

fn signed_permutations(base: [f64; 3]) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                let p = [base[0] * sx, base[1] * sy, base[2] * sz];
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn raw_vertices(solid: Solid) -> Vec<Vec3> {
    let phi = golden();
    match solid {
        Solid::Tetrahedron => vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ],
        Solid::Cube => signed_permutations([1.0, 1.0, 1.0])
            .into_iter()
            .map(|p| Vec3::new(p[0], p[1], p[2]))
            .collect(),
        Solid::Octahedron => cyclic(&signed_permutations([1.0, 0.0, 0.0])[..2]),
        Solid::Icosahedron => cyclic(&signed_permutations([0.0, 1.0, phi])),
        Solid::Dodecahedron => {
            let mut v: Vec<Vec3> = signed_permutations([1.0, 1.0, 1.0])
                .into_iter()
                .map(|p| Vec3::new(p[0], p[1], p[2]))
                .collect();
            v.extend(cyclic(&signed_permutations([0.0, 1.0 / phi, phi])));
            v
        }
    }
}

/// Face normals are the vertex directions of the dual solid.
fn dual_directions(solid: Solid) -> Vec<Vec3> {
    match solid {
        Solid::Tetrahedron => raw_vertices(Solid::Tetrahedron)
            .iter()
            .map(|v| -v)
            .collect(),
        Solid::Cube => raw_vertices(Solid::Octahedron),
        Solid::Octahedron => raw_vertices(Solid::Cube),
        Solid::Dodecahedron => cyclic(&signed_permutations([0.0, golden(), 1.0])),
        Solid::Icosahedron => {
            let phi = golden();
            let mut v: Vec<Vec3> = signed_permutations([1.0, 1.0, 1.0])
                .into_iter()
                .map(|p| Vec3::new(p[0], p[1], p[2]))
                .collect();
            v.extend(cyclic(&signed_permutations([0.0, phi, 1.0 / phi])));
            v
        }
    }
}

fn tangent_frame(n: &Vec3, reference: &Vec3) -> (Vec3, Vec3) {
    let e1 = (reference - n * n.dot(reference)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

fn build_polyhedron(solid: Solid) -> Polyhedron {
    let vertices: Vec<Vec3> = raw_vertices(solid).iter().map(|v| v.normalize()).collect();
    let mut faces = Vec::new();
    for normal in dual_directions(solid) {
        let n = normal.normalize();
        let best = vertices.iter().map(|v| v.dot(&n)).fold(f64::MIN, f64::max);
        let mut face: Vec<usize> = (0..vertices.len())
            .filter(|&i| (vertices[i].dot(&n) - best).abs() < 1e-9)
            .collect();
        let (e1, e2) = tangent_frame(&n, &vertices[face[0]]);
        face.sort_by(|&a, &b| {
            let ta = vertices[a].dot(&e2).atan2(vertices[a].dot(&e1));
            let tb = vertices[b].dot(&e2).atan2(vertices[b].dot(&e1));
            ta.partial_cmp(&tb).unwrap()
        });
        faces.push(face);
    }
    Polyhedron { vertices, faces }
}

/// Unit-circumradius polyhedron with face 0 centered on the +z pole.
pub fn canonical_polyhedron(solid: Solid) -> Polyhedron {
    let raw = build_polyhedron(solid);
    let z = Vec3::z();
    let top = raw.face_center(0);
    let rot = UnitQuaternion::rotation_between(&top, &z)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI));
    raw.rotated(&rot)
}

/// Orientation that restores the solid's textbook coordinates, where its
/// two-fold (or four-fold) axes lie on the grid axes.
pub fn axis_aligned_orientation(solid: Solid) -> UnitQuaternion<f64> {
    let top = build_polyhedron(solid).face_center(0);
    UnitQuaternion::rotation_between(&top, &Vec3::z())
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI))
        .inverse()
}

/// Orientation that turns the canonical (face-up) solid so that a vertex
/// sits on the +z pole and one of its neighbours lies in the +x half of the
/// xz-plane. For the octahedron this puts all six vertices on the grid axes.
pub fn vertex_up_orientation(solid: Solid) -> UnitQuaternion<f64> {
    let poly = canonical_polyhedron(solid);
    let face = &poly.faces[0];
    let (top, next) = (poly.vertices[face[0]], poly.vertices[face[1]]);
    let tilt =
        UnitQuaternion::rotation_between(&top, &Vec3::z()).unwrap_or_else(UnitQuaternion::identity);
    let n = tilt * next;
    let twist = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), -n.y.atan2(n.x));
    twist * tilt
}

/// One electrode: a convex spherical polygon bounded by small-circle arcs.
///
/// A unit vector `p` lies on the plate iff `pole · p >= edge_offset` for
/// every edge pole. `corners[k]` starts edge `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plate {
    pub center: Vec3,
    pub corners: Vec<Vec3>,
    pub edge_poles: Vec<Vec3>,
    pub edge_offset: f64,
}

impl Plate {
    /// Builds the inset plate for a spherical polygon with counter-clockwise
    /// unit `vertices`, moving each edge inward by `inset` radians.
    pub fn inset(vertices: &[Vec3], inset: f64) -> Result<Plate> {
        if vertices.len() < 3 {
            return Err(Error::InvalidParameter(
                "plate needs at least 3 vertices".into(),
            ));
        }
        let center = vertices
            .iter()
            .fold(Vec3::zeros(), |a, v| a + v)
            .normalize();
        let k = vertices.len();
        let mut poles = Vec::with_capacity(k);
        for i in 0..k {
            let mut n = vertices[i].cross(&vertices[(i + 1) % k]).normalize();
            if n.dot(&center) < 0.0 {
                n = -n;
            }
            poles.push(n);
        }
        let offset = inset.sin();
        for pole in &poles {
            if offset >= pole.dot(&center) {
                return Err(Error::InvalidParameter(format!(
                    "gap inset of {inset:.4} rad leaves no plate area"
                )));
            }
        }
        let mut corners = Vec::with_capacity(k);
        for i in 0..k {
            let prev = poles[(i + k - 1) % k];
            let next = poles[i];
            let g = prev.dot(&next);
            let m = prev.cross(&next);
            let a = offset / (1.0 + g);
            let rem = 1.0 - 2.0 * offset * offset / (1.0 + g);
            if rem <= 0.0 {
                return Err(Error::InvalidParameter(
                    "gap too large for plate corners".into(),
                ));
            }
            let c = rem.sqrt() / m.norm();
            let p1 = (prev + next) * a + m * c;
            let p2 = (prev + next) * a - m * c;
            let p = if p1.dot(&vertices[i]) >= p2.dot(&vertices[i]) {
                p1
            } else {
                p2
            };
            corners.push(p.normalize());
        }
        let plate = Plate {
            center,
            corners,
            edge_poles: poles,
            edge_offset: offset,
        };
        if plate.solid_angle() <= 0.0 {
            return Err(Error::InvalidParameter(
                "gap too large: plate area <= 0".into(),
            ));
        }
        Ok(plate)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.dot(&self.center) > 0.0 && self.edge_poles.iter().all(|n| n.dot(p) >= self.edge_offset)
    }

    /// Solid angle via Gauss-Bonnet: `2π − Σ∫k_g ds − Σ turning angles`.
    pub fn solid_angle(&self) -> f64 {
        let k = self.corners.len();
        let mut total = 2.0 * PI;
        for i in 0..k {
            let n = self.edge_poles[i];
            let a = self.corners[i];
            let b = self.corners[(i + 1) % k];
            let u = a - n * n.dot(&a);
            let w = b - n * n.dot(&b);
            let sweep = n.dot(&u.cross(&w)).atan2(u.dot(&w));
            total -= self.edge_offset * sweep;

            let prev = self.edge_poles[(i + k - 1) % k];
            let t_in = prev.cross(&a).normalize();
            let t_out = n.cross(&a).normalize();
            total -= a.dot(&t_in.cross(&t_out)).atan2(t_in.dot(&t_out));
        }
        total
    }

    /// Points along the boundary, `per_edge` samples per arc.
    pub fn boundary_samples(&self, per_edge: usize) -> Vec<Vec3> {
        let k = self.corners.len();
        let mut out = Vec::with_capacity(k * per_edge);
        for i in 0..k {
            let n = self.edge_poles[i];
            let a = self.corners[i];
            let b = self.corners[(i + 1) % k];
            let u = a - n * n.dot(&a);
            let w = b - n * n.dot(&b);
            let sweep = n.dot(&u.cross(&w)).atan2(u.dot(&w));
            for s in 0..per_edge {
                let t = sweep * s as f64 / per_edge as f64;
                let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(n), t);
                out.push(rot * a);
            }
        }
        out
    }

    fn rotated(&self, rot: &UnitQuaternion<f64>) -> Plate {
        Plate {
            center: rot * self.center,
            corners: self.corners.iter().map(|c| rot * c).collect(),
            edge_poles: self.edge_poles.iter().map(|c| rot * c).collect(),
            edge_offset: self.edge_offset,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SensorLayout {
    /// `None` for hand-authored layouts.
    pub solid: Option<Solid>,
    pub tank_radius: f64,
    pub gap_width: f64,
    pub orientation: UnitQuaternion<f64>,
    /// Oriented source polyhedron (un-inset), used for channel kinds and
    /// singularity locations.
    pub source: Polyhedron,
    pub plates: Vec<Plate>,
    pub channels: Vec<Channel>,
}

pub fn generate_layout(
    solid: Solid,
    tank_radius: f64,
    gap_width: f64,
    orientation: UnitQuaternion<f64>,
) -> Result<SensorLayout> {
    let source = canonical_polyhedron(solid).rotated(&orientation);
    SensorLayout::from_polyhedron(Some(solid), source, tank_radius, gap_width, orientation)
}

impl SensorLayout {
    pub fn from_polyhedron(
        solid: Option<Solid>,
        source: Polyhedron,
        tank_radius: f64,
        gap_width: f64,
        orientation: UnitQuaternion<f64>,
    ) -> Result<SensorLayout> {
        if !(tank_radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tank radius {tank_radius} must be > 0"
            )));
        }
        if !(gap_width >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gap width {gap_width} must be >= 0"
            )));
        }
        let inset = gap_width / (2.0 * tank_radius);
        let plates = source
            .faces
            .iter()
            .map(|f| {
                let verts: Vec<Vec3> = f.iter().map(|&i| source.vertices[i]).collect();
                Plate::inset(&verts, inset)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut layout = SensorLayout {
            solid,
            tank_radius,
            gap_width,
            orientation,
            source,
            plates,
            channels: Vec::new(),
        };
        layout.channels = enumerate_channels(&layout);
        Ok(layout)
    }

    pub fn plate_count(&self) -> usize {
        self.plates.len()
    }

    /// Index of the plate covering unit direction `p`, if any.
    pub fn plate_at(&self, p: &Vec3) -> Option<usize> {
        self.plates.iter().position(|plate| plate.contains(p))
    }

    pub fn channel_index(&self, a: usize, b: usize) -> Option<usize> {
        let (t, r) = if a < b { (a, b) } else { (b, a) };
        self.channels
            .iter()
            .position(|c| c.transmit == t && c.receive == r)
    }

    pub fn kind_tally(&self) -> BTreeMap<ChannelKind, usize> {
        let mut tally = BTreeMap::new();
        for c in &self.channels {
            *tally.entry(c.kind).or_insert(0) += 1;
        }
        tally
    }

    pub fn non_adjacent_count(&self) -> usize {
        self.channels
            .iter()
            .filter(|c| c.kind.is_non_adjacent())
            .count()
    }

    /// Plate areas in square meters.
    pub fn plate_areas(&self) -> Vec<f64> {
        let r2 = self.tank_radius * self.tank_radius;
        self.plates.iter().map(|p| p.solid_angle() * r2).collect()
    }

    /// Same sensor with an extra rotation applied on top of its orientation.
    pub fn rotated(&self, rot: &UnitQuaternion<f64>) -> SensorLayout {
        SensorLayout {
            solid: self.solid,
            tank_radius: self.tank_radius,
            gap_width: self.gap_width,
            orientation: rot * self.orientation,
            source: self.source.rotated(rot),
            plates: self.plates.iter().map(|p| p.rotated(rot)).collect(),
            channels: self.channels.clone(),
        }
    }

    /// Proper rotations mapping the source polyhedron onto itself.
    ///
    /// Built by sending the flag (face 0, its first vertex) to every
    /// (face, vertex) flag and keeping the rotations that preserve the
    /// vertex set.
    pub fn symmetry_rotations(&self) -> Vec<Rotation3<f64>> {
        let poly = &self.source;
        if poly.faces.is_empty() {
            return vec![Rotation3::identity()];
        }
        let frame = |face: usize, vertex: usize| -> Matrix3<f64> {
            let f = poly.face_center(face);
            let e = (poly.vertices[vertex] - f * f.dot(&poly.vertices[vertex])).normalize();
            Matrix3::from_columns(&[f, e, f.cross(&e)])
        };
        let base = frame(0, poly.faces[0][0]);
        let mut out: Vec<Rotation3<f64>> = Vec::new();
        for (fi, face) in poly.faces.iter().enumerate() {
            for &v in face {
                let m = frame(fi, v) * base.transpose();
                let rot = Rotation3::from_matrix_unchecked(m);
                let preserves = poly.vertices.iter().all(|p| {
                    let q = rot * p;
                    poly.vertices.iter().any(|w| (w - q).norm() < 1e-7)
                });
                if preserves
                    && !out
                        .iter()
                        .any(|r: &Rotation3<f64>| (r.matrix() - m).norm() < 1e-7)
                {
                    out.push(rot);
                }
            }
        }
        out
    }

    /// Plate index permutation induced by `rot`, if it maps plates onto plates.
    pub fn plate_permutation(&self, rot: &Rotation3<f64>) -> Option<Vec<usize>> {
        self.plates
            .iter()
            .map(|p| {
                let q = rot * p.center;
                self.plates
                    .iter()
                    .position(|o| (o.center - q).norm() < 1e-7)
            })
            .collect()
    }
}

pub fn enumerate_channels(layout: &SensorLayout) -> Vec<Channel> {
    let n = layout.plates.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for t in 0..n {
        for r in (t + 1)..n {
            out.push(Channel {
                transmit: t,
                receive: r,
                kind: classify_pair(&layout.source, t, r),
            });
        }
    }
    out
}

fn shared_vertices(poly: &Polyhedron, a: usize, b: usize) -> Vec<usize> {
    poly.faces[a]
        .iter()
        .copied()
        .filter(|v| poly.faces[b].contains(v))
        .collect()
}

fn classify_pair(poly: &Polyhedron, a: usize, b: usize) -> ChannelKind {
    match shared_vertices(poly, a, b).len() {
        0 => {
            if poly.face_center(a).dot(&poly.face_center(b)) < -1.0 + VERTEX_TOL {
                ChannelKind::Opposite
            } else {
                ChannelKind::Cross
            }
        }
        1 => ChannelKind::SemiAdjacent,
        _ => ChannelKind::Adjacent,
    }
}

pub fn classify_channel(layout: &SensorLayout, channel: &Channel) -> ChannelKind {
    classify_pair(&layout.source, channel.transmit, channel.receive)
}

/// Midpoint of every shared edge, as unit vectors (one per adjacent channel).
pub fn singularity_points(layout: &SensorLayout) -> Vec<Vec3> {
    layout
        .channels
        .iter()
        .filter(|c| c.kind == ChannelKind::Adjacent)
        .map(|c| {
            shared_vertices(&layout.source, c.transmit, c.receive)
                .iter()
                .fold(Vec3::zeros(), |acc, &v| acc + layout.source.vertices[v])
                .normalize()
        })
        .collect()
}

/// Great-circle distance between unit vectors, in radians.
pub fn arc_distance(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// JSON interchange form of a [`SensorLayout`].
///
/// `source_*`, per-plate `edge_poles`/`edge_offset` and `channels` may be
/// omitted from hand-authored files; they are then rebuilt from the plate
/// vertex loops and the gap width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub solid: Option<Solid>,
    pub tank_radius: f64,
    pub gap_width: f64,
    pub orientation: QuaternionDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_vertices: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_faces: Option<Vec<Vec<usize>>>,
    pub plates: Vec<PlateDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<Channel>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuaternionDoc {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateDocument {
    /// Corner loop, counter-clockwise seen from outside the tank.
    pub vertices: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_poles: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_offset: Option<f64>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SensorLayout {
    pub fn to_document(&self) -> LayoutDocument {
        let q = self.orientation.quaternion();
        LayoutDocument {
            solid: self.solid,
            tank_radius: self.tank_radius,
            gap_width: self.gap_width,
            orientation: QuaternionDoc {
                w: q.w,
                x: q.i,
                y: q.j,
                z: q.k,
            },
            source_vertices: Some(self.source.vertices.iter().map(arr).collect()),
            source_faces: Some(self.source.faces.clone()),
            plates: self
                .plates
                .iter()
                .map(|p| PlateDocument {
                    vertices: p.corners.iter().map(arr).collect(),
                    edge_poles: Some(p.edge_poles.iter().map(arr).collect()),
                    edge_offset: Some(p.edge_offset),
                })
                .collect(),
            channels: Some(self.channels.clone()),
        }
    }

    pub fn from_document(doc: &LayoutDocument) -> Result<SensorLayout> {
        let q = doc.orientation;
        let orientation =
            UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(q.w, q.x, q.y, q.z));
        let source = match (&doc.source_vertices, &doc.source_faces) {
            (Some(v), Some(f)) => Polyhedron {
                vertices: v.iter().map(vec3).collect(),
                faces: f.clone(),
            },
            _ => topology_from_loops(&doc.plates),
        };
        let complete = doc
            .plates
            .iter()
            .all(|p| p.edge_poles.is_some() && p.edge_offset.is_some());
        let mut layout = if complete {
            let plates = doc
                .plates
                .iter()
                .map(|p| {
                    let corners: Vec<Vec3> = p.vertices.iter().map(vec3).collect();
                    Plate {
                        center: corners.iter().fold(Vec3::zeros(), |a, c| a + c).normalize(),
                        corners,
                        edge_poles: p.edge_poles.as_ref().unwrap().iter().map(vec3).collect(),
                        edge_offset: p.edge_offset.unwrap(),
                    }
                })
                .collect();
            let mut layout = SensorLayout {
                solid: doc.solid,
                tank_radius: doc.tank_radius,
                gap_width: doc.gap_width,
                orientation,
                source,
                plates,
                channels: Vec::new(),
            };
            layout.channels = enumerate_channels(&layout);
            layout
        } else {
            SensorLayout::from_polyhedron(
                doc.solid,
                source,
                doc.tank_radius,
                doc.gap_width,
                orientation,
            )?
        };
        if let Some(channels) = &doc.channels {
            layout.channels = channels.clone();
        }
        Ok(layout)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<SensorLayout> {
        SensorLayout::from_document(&serde_json::from_str(text)?)
    }

    /// SHA-256 of the compact JSON document.
    pub fn content_hash(&self) -> String {
        crate::content_hash(
            serde_json::to_string(&self.to_document())
                .unwrap()
                .as_bytes(),
        )
    }
}

fn topology_from_loops(plates: &[PlateDocument]) -> Polyhedron {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    for plate in plates {
        let mut face = Vec::new();
        for a in &plate.vertices {
            let v = vec3(a).normalize();
            let idx = match vertices.iter().position(|w| (w - v).norm() < 1e-9) {
                Some(i) => i,
                None => {
                    vertices.push(v);
                    vertices.len() - 1
                }
            };
            face.push(idx);
        }
        faces.push(face);
    }
    Polyhedron { vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(layout: &SensorLayout, kind: ChannelKind) -> usize {
        layout.kind_tally().get(&kind).copied().unwrap_or(0)
    }

    #[test]
    fn face_counts_and_regularity() {
        for solid in Solid::ALL {
            let poly = canonical_polyhedron(solid);
            assert_eq!(poly.faces.len(), solid.face_count());
            let edges: usize = poly.faces.iter().map(|f| f.len()).sum::<usize>() / 2;
            assert_eq!(edges, solid.edge_count());
            assert!((poly.face_center(0) - Vec3::z()).norm() < 1e-12, "{solid}");
        }
    }

    #[test]
    fn dodecahedron_reference_sensor() {
        let layout = generate_layout(
            Solid::Dodecahedron,
            0.12065,
            0.00635,
            UnitQuaternion::identity(),
        )
        .unwrap();
        assert_eq!(layout.plate_count(), 12);
        assert_eq!(layout.channels.len(), 66);
        let total: f64 = layout.plate_areas().iter().sum();
        assert!(total < 4.0 * PI * 0.12065f64.powi(2));
    }

    #[test]
    fn zero_gap_tetrahedron_covers_sphere() {
        let layout =
            generate_layout(Solid::Tetrahedron, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
        let total: f64 = layout.plate_areas().iter().sum();
        assert!((total - 4.0 * PI).abs() < 1e-10, "{total}");
    }

    #[test]
    fn zero_gap_areas_for_every_solid() {
        for solid in Solid::ALL {
            let layout = generate_layout(solid, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
            for a in layout.plate_areas() {
                assert!((a - 4.0 * PI / solid.face_count() as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn octahedron_plates_congruent() {
        let layout =
            generate_layout(Solid::Octahedron, 1.0, 0.01, UnitQuaternion::identity()).unwrap();
        let areas = layout.plate_areas();
        assert_eq!(areas.len(), 8);
        for a in &areas {
            for b in &areas {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oversized_gap_is_rejected() {
        let err = generate_layout(Solid::Tetrahedron, 1.0, 3.0, UnitQuaternion::identity());
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
        assert!(generate_layout(Solid::Cube, 0.0, 0.0, UnitQuaternion::identity()).is_err());
    }

    #[test]
    fn kind_tallies() {
        let id = UnitQuaternion::identity();
        let octa = generate_layout(Solid::Octahedron, 1.0, 0.01, id).unwrap();
        assert_eq!(tally(&octa, ChannelKind::Adjacent), 12);
        assert_eq!(tally(&octa, ChannelKind::SemiAdjacent), 12);
        assert_eq!(tally(&octa, ChannelKind::Opposite), 4);
        let dodeca = generate_layout(Solid::Dodecahedron, 1.0, 0.01, id).unwrap();
        assert_eq!(tally(&dodeca, ChannelKind::Adjacent), 30);
        assert_eq!(tally(&dodeca, ChannelKind::Cross), 30);
        assert_eq!(tally(&dodeca, ChannelKind::Opposite), 6);
        let tetra = generate_layout(Solid::Tetrahedron, 1.0, 0.0, id).unwrap();
        assert_eq!(tally(&tetra, ChannelKind::Adjacent), 6);
        let cube = generate_layout(Solid::Cube, 1.0, 0.0, id).unwrap();
        assert_eq!(tally(&cube, ChannelKind::Adjacent), 12);
        assert_eq!(tally(&cube, ChannelKind::Opposite), 3);
        assert_eq!(tally(&cube, ChannelKind::SemiAdjacent), 0);
    }

    #[test]
    fn single_plate_has_no_channels() {
        let poly = Polyhedron {
            vertices: vec![
                Vec3::new(1.0, 0.0, 1.0).normalize(),
                Vec3::new(0.0, 1.0, 1.0).normalize(),
                Vec3::new(-1.0, -1.0, 1.0).normalize(),
            ],
            faces: vec![vec![0, 1, 2]],
        };
        let layout =
            SensorLayout::from_polyhedron(None, poly, 1.0, 0.0, UnitQuaternion::identity())
                .unwrap();
        assert!(enumerate_channels(&layout).is_empty());
    }

    #[test]
    fn rotational_orders_match_group_sizes() {
        assert_eq!(rotational_order(Solid::Dodecahedron), 60);
        assert_eq!(rotational_order(Solid::Tetrahedron), 12);
        assert_eq!(rotational_order(Solid::Cube), 24);
        for solid in Solid::ALL {
            let layout = generate_layout(solid, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
            assert_eq!(
                layout.symmetry_rotations().len(),
                rotational_order(solid),
                "{solid}"
            );
        }
    }

    #[test]
    fn singularity_counts() {
        for solid in Solid::ALL {
            let layout = generate_layout(solid, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
            assert_eq!(singularity_points(&layout).len(), solid.edge_count());
        }
    }

    #[test]
    fn plate_lookup_matches_center() {
        let layout =
            generate_layout(Solid::Dodecahedron, 1.0, 0.05, UnitQuaternion::identity()).unwrap();
        for (i, plate) in layout.plates.iter().enumerate() {
            assert_eq!(layout.plate_at(&plate.center), Some(i));
        }
        for s in singularity_points(&layout) {
            assert_eq!(layout.plate_at(&s), None, "edge midpoints fall in the gap");
        }
    }

    #[test]
    fn solid_parses_from_name() {
        assert_eq!(
            "Dodecahedron".parse::<Solid>().unwrap(),
            Solid::Dodecahedron
        );
        assert!("sphere".parse::<Solid>().is_err());
    }
    #[test]
    fn document_round_trip() {
        let q = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let layout = generate_layout(Solid::Dodecahedron, 0.12065, 0.00635, q).unwrap();
        let back = SensorLayout::from_json(&layout.to_json().unwrap()).unwrap();
        assert_eq!(back.channels, layout.channels);
        assert_eq!(back.content_hash(), layout.content_hash());
        for (a, b) in back.plate_areas().iter().zip(layout.plate_areas()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_authored_layout_from_loops() {
        let cube = generate_layout(Solid::Cube, 1.0, 0.0, UnitQuaternion::identity()).unwrap();
        let mut doc = cube.to_document();
        doc.solid = None;
        doc.gap_width = 0.02;
        doc.source_vertices = None;
        doc.source_faces = None;
        doc.channels = None;
        for p in &mut doc.plates {
            p.edge_poles = None;
            p.edge_offset = None;
        }
        let layout = SensorLayout::from_document(&doc).unwrap();
        assert_eq!(layout.plate_count(), 6);
        assert_eq!(layout.non_adjacent_count(), 3);
        assert_eq!(layout.kind_tally()[&ChannelKind::Adjacent], 12);
    }

    #[test]
    fn rotated_layout_classification_is_invariant() {
        let layout =
            generate_layout(Solid::Octahedron, 1.0, 0.02, UnitQuaternion::identity()).unwrap();
        for rot in layout.symmetry_rotations() {
            let perm = layout.plate_permutation(&rot).unwrap();
            for ch in &layout.channels {
                let idx = layout
                    .channel_index(perm[ch.transmit], perm[ch.receive])
                    .unwrap();
                assert_eq!(layout.channels[idx].kind, ch.kind);
            }
        }
    }
    #[test]
    fn vertex_up_octahedron_is_axis_aligned() {
        let layout = generate_layout(
            Solid::Octahedron,
            1.0,
            0.0,
            vertex_up_orientation(Solid::Octahedron),
        )
        .unwrap();
        for v in &layout.source.vertices {
            let max = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assert!((max - 1.0).abs() < 1e-12, "{v:?}");
        }
    }
}
