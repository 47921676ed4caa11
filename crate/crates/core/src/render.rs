//! Z-buffered software rasterization of triangle meshes into depth, object
//! coordinate and mask images, plus the object-centered window.

use std::path::Path;

use crate::error::{IoError, RenderError};
use crate::geometry::{CameraIntrinsics, Pose, Vec3};

/// Window side length is `ceil(WINDOW_PAD * diameter * f / z)`.
pub const WINDOW_PAD: f64 = 1.2;
pub const MIN_WINDOW: usize = 16;
/// Windows larger than this are rendered at this resolution.
pub const MAX_RENDER_SIZE: usize = 100;
/// Triangles with a vertex closer than this (mm) are not drawn.
pub const NEAR_PLANE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    diameter: f64,
}

impl TriangleMesh {
    /// Validates indices, non-emptiness and that the vertex centroid lies within
    /// 1 mm of the origin.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, RenderError> {
        if triangles.is_empty() {
            return Err(RenderError::InvalidMesh("mesh has no triangles".into()));
        }
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i as usize >= vertices.len()))
        {
            return Err(RenderError::InvalidMesh(format!(
                "triangle {t:?} references a vertex out of range (have {})",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(RenderError::InvalidMesh("non-finite vertex".into()));
        }
        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        if centroid.norm() > 1.0 {
            return Err(RenderError::InvalidMesh(format!(
                "vertex centroid {:.3} mm from the origin",
                centroid.norm()
            )));
        }
        let diameter = max_pairwise_distance(&vertices);
        if !(diameter > 0.0) {
            return Err(RenderError::InvalidMesh("zero diameter".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            diameter,
        })
    }

    /// Shifts the vertices so their centroid is the origin, then validates.
    pub fn centered(mut vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, RenderError> {
        if !vertices.is_empty() {
            let c = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
            vertices.iter_mut().for_each(|v| *v -= c);
        }
        Self::new(vertices, triangles)
    }

    /// Axis-aligned box centered at the origin.
    pub fn cuboid(size: Vec3) -> Self {
        let mut b = MeshBuilder::default();
        b.add_cuboid(Vec3::zeros(), size);
        b.build().expect("a cuboid is a valid mesh")
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Maximum distance between any two vertices (mm).
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Parses the `v`/`f` subset of Wavefront OBJ. Polygons are fan
    /// triangulated; coordinates are multiplied by `scale`. A mesh whose vertex
    /// centroid is more than 1 mm from the origin is re-centered; otherwise the
    /// coordinates are kept as written.
    pub fn from_obj_str(text: &str, scale: f64) -> Result<Self, RenderError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let coords: Result<Vec<f64>, _> = tokens.take(3).map(str::parse).collect();
                    match coords {
                        Ok(c) if c.len() == 3 => {
                            vertices.push(Vec3::new(c[0], c[1], c[2]) * scale)
                        }
                        _ => {
                            return Err(RenderError::InvalidMesh(format!(
                                "line {}: bad vertex",
                                lineno + 1
                            )))
                        }
                    }
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in tokens {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| {
                            RenderError::InvalidMesh(format!("line {}: bad face index", lineno + 1))
                        })?;
                        let resolved = if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            i - 1
                        };
                        if resolved < 0 {
                            return Err(RenderError::InvalidMesh(format!(
                                "line {}: face index out of range",
                                lineno + 1
                            )));
                        }
                        idx.push(resolved as u32);
                    }
                    if idx.len() < 3 {
                        return Err(RenderError::InvalidMesh(format!(
                            "line {}: face with fewer than 3 vertices",
                            lineno + 1
                        )));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        match Self::new(vertices.clone(), triangles.clone()) {
            Err(RenderError::InvalidMesh(_)) if !vertices.is_empty() => Self::centered(vertices, triangles),
            other => other,
        }
    }

    pub fn load_obj(path: &Path, scale: f64) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_obj_str(&text, scale)
            .map_err(|e| IoError::malformed("mesh", path, e.to_string()))
    }

    pub fn to_obj_string(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {:?} {:?} {:?}\n", v[0], v[1], v[2]));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }
}

fn max_pairwise_distance(vertices: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in vertices.iter().enumerate() {
        for b in &vertices[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Accumulates boxes and triangles into one mesh.
#[derive(Debug, Default, Clone)]
pub struct MeshBuilder {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    pub fn add_triangle(&mut self, a: Vec3, b: Vec3, c: Vec3) -> &mut Self {
        let base = self.vertices.len() as u32;
        self.vertices.extend([a, b, c]);
        self.triangles.push([base, base + 1, base + 2]);
        self
    }

    pub fn add_cuboid(&mut self, center: Vec3, size: Vec3) -> &mut Self {
        let h = size * 0.5;
        let base = self.vertices.len() as u32;
        for i in 0..8u32 {
            let s = |bit: u32| if i & bit != 0 { 1.0 } else { -1.0 };
            self.vertices
                .push(center + Vec3::new(s(1) * h[0], s(2) * h[1], s(4) * h[2]));
        }
        const QUADS: [[u32; 4]; 6] = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        for q in QUADS {
            self.triangles
                .push([base + q[0], base + q[1], base + q[2]]);
            self.triangles
                .push([base + q[0], base + q[2], base + q[3]]);
        }
        self
    }

    /// Re-centers on the vertex centroid.
    pub fn build(&self) -> Result<TriangleMesh, RenderError> {
        TriangleMesh::centered(self.vertices.clone(), self.triangles.clone())
    }

    /// Keeps coordinates as given (centroid must already be near the origin).
    pub fn build_uncentered(&self) -> Result<TriangleMesh, RenderError> {
        TriangleMesh::new(self.vertices.clone(), self.triangles.clone())
    }
}

/// Square, object-centered cutout of the image. `size` is the raw side
/// length; rendering happens at `render_size()` which caps it at 100.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub size: usize,
}

impl Window {
    pub fn render_size(&self) -> usize {
        self.size.min(MAX_RENDER_SIZE)
    }

    /// Frame-pixel offset (from `x0`/`y0`) sampled by render pixel `a`; nearest
    /// neighbor when the window is downsampled.
    #[inline]
    pub fn sample_offset(&self, a: usize) -> i64 {
        let rs = self.render_size();
        if rs == self.size {
            a as i64
        } else {
            (((2 * a + 1) * self.size) / (2 * rs)) as i64
        }
    }

    pub fn sample_columns(&self) -> Vec<i64> {
        (0..self.render_size())
            .map(|a| self.x0 + self.sample_offset(a))
            .collect()
    }

    pub fn sample_rows(&self) -> Vec<i64> {
        (0..self.render_size())
            .map(|b| self.y0 + self.sample_offset(b))
            .collect()
    }
}

/// Object-centered window whose side scales with diameter over distance.
pub fn compute_window(
    pose: &Pose,
    diameter: f64,
    k: &CameraIntrinsics,
) -> Result<Window, RenderError> {
    let tz = pose.translation[2];
    if !(tz > 0.0) {
        return Err(RenderError::BehindCamera(tz));
    }
    let raw = (WINDOW_PAD * diameter * k.fx.max(k.fy) / tz).ceil();
    let size = (raw as usize).max(MIN_WINDOW);
    let (u, v) = k.project(&pose.translation);
    let half = (size / 2) as i64;
    Ok(Window {
        x0: u.round() as i64 - half,
        y0: v.round() as i64 - half,
        size,
    })
}

/// Rendered depth (camera z, mm; 0 = background), object coordinates and mask
/// on a `width × height` sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImages {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub object_coords: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl RenderedImages {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            object_coords: vec![Vec3::zeros(); width * height],
            mask: vec![false; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn covered_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Rasterizes `mesh` at `pose` onto the grid of frame pixel centers
/// `columns × rows` (both strictly increasing).
pub fn rasterize(
    mesh: &TriangleMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    columns: &[i64],
    rows: &[i64],
) -> RenderedImages {
    let (w, h) = (columns.len(), rows.len());
    let mut out = RenderedImages::empty(w, h);
    if w == 0 || h == 0 {
        return out;
    }
    let cam: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| pose.transform_point(v))
        .collect();

    for tri in mesh.triangles() {
        let mut idx = [tri[0] as usize, tri[1] as usize, tri[2] as usize];
        if idx.iter().any(|&i| cam[i][2] <= NEAR_PLANE) {
            continue;
        }
        let mut p = idx.map(|i| k.project(&cam[i]));
        let mut area = edge(p[0], p[1], p[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            idx.swap(1, 2);
            p.swap(1, 2);
            area = -area;
        }
        let inv_z = idx.map(|i| 1.0 / cam[i][2]);
        let oc = idx.map(|i| mesh.vertices()[i]);

        let umin = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let umax = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let vmin = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let vmax = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let a0 = columns.partition_point(|&c| (c as f64) < umin);
        let a1 = columns.partition_point(|&c| (c as f64) <= umax);
        let b0 = rows.partition_point(|&r| (r as f64) < vmin);
        let b1 = rows.partition_point(|&r| (r as f64) <= vmax);

        let top_left = [
            is_top_left(p[1], p[2]),
            is_top_left(p[2], p[0]),
            is_top_left(p[0], p[1]),
        ];
        for b in b0..b1 {
            let py = rows[b] as f64;
            for a in a0..a1 {
                let q = (columns[a] as f64, py);
                let e = [edge(p[1], p[2], q), edge(p[2], p[0], q), edge(p[0], p[1], q)];
                let inside = e
                    .iter()
                    .zip(top_left)
                    .all(|(&ei, tl)| ei > 0.0 || (ei == 0.0 && tl));
                if !inside {
                    continue;
                }
                let l = [e[0] / area, e[1] / area, e[2] / area];
                let iz = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
                let z = 1.0 / iz;
                let i = b * w + a;
                if out.mask[i] && z >= out.depth[i] {
                    continue;
                }
                out.depth[i] = z;
                out.mask[i] = true;
                out.object_coords[i] = (oc[0] * (l[0] * inv_z[0])
                    + oc[1] * (l[1] * inv_z[1])
                    + oc[2] * (l[2] * inv_z[2]))
                    * z;
            }
        }
    }
    out
}

/// Positive when `q` lies left of `a→b` in y-down image coordinates.
#[inline]
fn edge(a: (f64, f64), b: (f64, f64), q: (f64, f64)) -> f64 {
    (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0)
}

#[inline]
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Renders the window around `pose`, downsampling by nearest neighbor when
/// the raw window exceeds 100 pixels.
pub fn render(
    mesh: &TriangleMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    window: &Window,
) -> RenderedImages {
    rasterize(mesh, pose, k, &window.sample_columns(), &window.sample_rows())
}

/// Renders the whole image at native resolution.
pub fn render_full_frame(mesh: &TriangleMesh, pose: &Pose, k: &CameraIntrinsics) -> RenderedImages {
    let cols: Vec<i64> = (0..k.width as i64).collect();
    let rows: Vec<i64> = (0..k.height as i64).collect();
    rasterize(mesh, pose, k, &cols, &rows)
}

/// Full-frame composite of several posed meshes.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub width: usize,
    pub height: usize,
    /// Front-most depth (0 = nothing).
    pub depth: Vec<f64>,
    /// Index of the front-most object per pixel.
    pub owner: Vec<Option<usize>>,
    /// Object coordinates of the front-most surface, in its own object frame.
    pub object_coords: Vec<Vec3>,
}

/// Z-buffer composite; on exactly equal depth the lower object index wins.
pub fn render_scene(objects: &[(&TriangleMesh, Pose)], k: &CameraIntrinsics) -> SceneRender {
    let n = k.pixel_count();
    let mut scene = SceneRender {
        width: k.width,
        height: k.height,
        depth: vec![0.0; n],
        owner: vec![None; n],
        object_coords: vec![Vec3::zeros(); n],
    };
    for (oi, (mesh, pose)) in objects.iter().enumerate() {
        let r = render_full_frame(mesh, pose, k);
        for i in 0..n {
            if r.mask[i] && (scene.owner[i].is_none() || r.depth[i] < scene.depth[i]) {
                scene.depth[i] = r.depth[i];
                scene.owner[i] = Some(oi);
                scene.object_coords[i] = r.object_coords[i];
            }
        }
    }
    scene
}
