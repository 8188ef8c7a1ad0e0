//! Synthetic tabletop scenes: typed objects placed on the unit square, a
//! hard-edged top-down rasterizer, symbol insertion for interventions, and
//! the `scene.json` / `scene.png` file pair.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};
use crate::trajectory::{self, ControlPoint, UserType, P_FINAL, P_INIT};

pub const IMAGE_SIZE: usize = 100;
pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 6;
/// Generated scenes hold at most [`MAX_OBJECTS`]; one inserted symbol may go beyond.
pub const MAX_OBJECTS_AUGMENTED: usize = MAX_OBJECTS + 1;
pub const ENDPOINT_CLEARANCE: f64 = 0.08;
pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// Regenerations allowed when a layout admits no careful-valid control point.
pub const MAX_REGENERATIONS: usize = 200;
pub const CUTLERY_ASPECT: f64 = 6.0;
pub const TEST_RADIUS_SCALE: f64 = 0.9;
/// Hue rotation (fraction of a full turn) applied to every test-split color.
pub const TEST_HUE_SHIFT: f64 = 1.0 / 12.0;
pub const FEASIBILITY_GRID: usize = 21;
pub const SCENE_SCHEMA_VERSION: u32 = 1;

pub type Rgb = [f64; 3];

pub const BACKGROUND: Rgb = [0.96, 0.96, 0.94];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Bowl,
    Plate,
    Cutlery,
    Glass,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [
        ObjectKind::Bowl,
        ObjectKind::Plate,
        ObjectKind::Cutlery,
        ObjectKind::Glass,
    ];

    /// Radius range on the training split (half-length for cutlery).
    pub fn radius_range(self) -> (f64, f64) {
        match self {
            ObjectKind::Plate => (0.10, 0.16),
            ObjectKind::Bowl => (0.07, 0.11),
            ObjectKind::Glass => (0.04, 0.07),
            ObjectKind::Cutlery => (0.08, 0.12),
        }
    }

    fn train_color(self) -> Rgb {
        match self {
            ObjectKind::Plate => [0.75, 0.75, 0.78],
            ObjectKind::Bowl => [0.55, 0.35, 0.20],
            ObjectKind::Glass => [0.25, 0.45, 0.85],
            ObjectKind::Cutlery => [0.60, 0.60, 0.62],
        }
    }

    pub fn color(self, variant: Split) -> Rgb {
        match variant {
            Split::Train => self.train_color(),
            Split::Test => shift_hue(self.train_color(), TEST_HUE_SHIFT),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Bowl => "bowl",
            ObjectKind::Plate => "plate",
            ObjectKind::Cutlery => "cutlery",
            ObjectKind::Glass => "glass",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ObjectKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown object kind {s:?}")))
    }
}

/// Dataset split; doubles as the appearance variant of an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn radius_scale(self) -> f64 {
        match self {
            Split::Train => 1.0,
            Split::Test => TEST_RADIUS_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub cx: f64,
    pub cy: f64,
    /// Disk radius, or half-length of the long axis for cutlery.
    pub radius: f64,
    /// Orientation in radians; only meaningful for cutlery.
    pub angle: f64,
    pub variant: Split,
}

impl SceneObject {
    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    /// Signed distance from `p` to the object footprint (negative inside).
    pub fn footprint_distance(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        match self.kind {
            ObjectKind::Cutlery => {
                let (s, c) = self.angle.sin_cos();
                // rotate into the rectangle frame
                let u = (c * dx + s * dy).abs() - self.radius;
                let v = (-s * dx + c * dy).abs() - self.radius / CUTLERY_ASPECT;
                let outside = u.max(0.0).hypot(v.max(0.0));
                outside + u.max(v).min(0.0)
            }
            _ => dx.hypot(dy) - self.radius,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.footprint_distance(p) <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub seed: u64,
    pub split: Split,
}

/// Requested object count for [`generate_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectCount {
    Exactly(usize),
    Random,
}

/// Lists every structural invariant a scene breaks; empty if valid.
pub fn invariant_violations(scene: &Scene) -> Vec<String> {
    let mut out = Vec::new();
    let n = scene.objects.len();
    if n > MAX_OBJECTS_AUGMENTED {
        out.push(format!("{n} objects exceeds {MAX_OBJECTS_AUGMENTED}"));
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if !(o.cx - o.radius >= 0.0
            && o.cx + o.radius <= 1.0
            && o.cy - o.radius >= 0.0
            && o.cy + o.radius <= 1.0)
        {
            out.push(format!("object {i} leaves the unit square"));
        }
        let (lo, hi) = o.kind.radius_range();
        let s = o.variant.radius_scale();
        if o.radius < lo * s - 1e-12 || o.radius > hi * s + 1e-12 {
            out.push(format!("object {i} radius {} outside range", o.radius));
        }
        for p in [P_INIT, P_FINAL] {
            if dist(o.center(), p) <= o.radius + ENDPOINT_CLEARANCE {
                out.push(format!("object {i} intrudes on an endpoint disk"));
            }
        }
        for (j, q) in scene.objects.iter().enumerate().skip(i + 1) {
            if dist(o.center(), q.center()) <= o.radius + q.radius {
                out.push(format!("objects {i} and {j} overlap"));
            }
        }
    }
    out
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn fits(candidate: &SceneObject, existing: &[SceneObject]) -> bool {
    let c = candidate.center();
    [P_INIT, P_FINAL]
        .iter()
        .all(|&p| dist(c, p) > candidate.radius + ENDPOINT_CLEARANCE)
        && existing
            .iter()
            .all(|o| dist(c, o.center()) > candidate.radius + o.radius)
}

fn place_object(
    kind: ObjectKind,
    variant: Split,
    existing: &[SceneObject],
    rng: &mut Rng,
) -> Result<SceneObject> {
    let (lo, hi) = kind.radius_range();
    let scale = variant.radius_scale();
    for _ in 0..PLACEMENT_ATTEMPTS {
        let radius = rng.random_range(lo..=hi) * scale;
        let cx = rng.random_range(radius..=1.0 - radius);
        let cy = rng.random_range(radius..=1.0 - radius);
        let angle = if kind == ObjectKind::Cutlery {
            rng.random_range(0.0..std::f64::consts::PI)
        } else {
            0.0
        };
        let obj = SceneObject {
            kind,
            cx,
            cy,
            radius,
            angle,
            variant,
        };
        if fits(&obj, existing) {
            return Ok(obj);
        }
    }
    Err(Error::PlacementFailure {
        attempts: PLACEMENT_ATTEMPTS,
    })
}

/// True if some control point on the feasibility grid is careful-valid.
pub fn has_careful_valid_path(scene: &Scene) -> bool {
    let n = FEASIBILITY_GRID;
    (0..n).any(|i| {
        (0..n).any(|j| {
            let theta = ControlPoint::new(i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
            trajectory::oracle_validity(scene, theta, UserType::Careful)
        })
    })
}

pub fn generate_scene(seed: u64, split: Split, count: ObjectCount) -> Result<Scene> {
    if let ObjectCount::Exactly(n) = count {
        if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n) {
            return Err(Error::Precondition(format!(
                "object_count {n} outside [{MIN_OBJECTS}, {MAX_OBJECTS}]"
            )));
        }
    }
    let mut rng = rng_from(seed, split.name(), 0);
    for _ in 0..MAX_REGENERATIONS {
        let n = match count {
            ObjectCount::Exactly(n) => n,
            ObjectCount::Random => rng.random_range(MIN_OBJECTS..=MAX_OBJECTS),
        };
        let mut objects = Vec::with_capacity(n);
        for _ in 0..n {
            let kind = ObjectKind::ALL[rng.random_range(0..ObjectKind::ALL.len())];
            let obj = place_object(kind, split, &objects, &mut rng)?;
            objects.push(obj);
        }
        let scene = Scene {
            objects,
            seed,
            split,
        };
        if has_careful_valid_path(&scene) {
            return Ok(scene);
        }
    }
    Err(Error::PlacementFailure {
        attempts: MAX_REGENERATIONS,
    })
}

/// Returns a copy of `scene` with one extra object of `kind`.
pub fn augment_scene(scene: &Scene, kind: ObjectKind, seed: u64) -> Result<Scene> {
    if scene.objects.len() >= MAX_OBJECTS_AUGMENTED {
        return Err(Error::PlacementFailure { attempts: 0 });
    }
    let mut rng = rng_from(seed, "augment", scene.seed);
    let obj = place_object(kind, scene.split, &scene.objects, &mut rng)?;
    let mut out = scene.clone();
    out.objects.push(obj);
    Ok(out)
}

/// Row-major H x W x 3 raster with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn filled(height: usize, width: usize, color: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&color);
        }
        Image {
            height,
            width,
            pixels,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set(&mut self, row: usize, col: usize, c: Rgb) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Scene coordinates of a pixel center; row 0 is the far (top) edge.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        pixel_center(self.height, self.width, row, col)
    }

    /// Channel-major copy (3 x H x W) for the convolutional encoder.
    pub fn to_chw(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.pixels[p * 3 + c];
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, chw: &[f64]) -> Self {
        let hw = height * width;
        let mut pixels = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                pixels[p * 3 + c] = chw[c * hw + p];
            }
        }
        Image {
            height,
            width,
            pixels,
        }
    }
}

pub fn pixel_center(height: usize, width: usize, row: usize, col: usize) -> [f64; 2] {
    [
        (col as f64 + 0.5) / width as f64,
        1.0 - (row as f64 + 0.5) / height as f64,
    ]
}

pub fn render_scene(scene: &Scene) -> Image {
    render_scene_at(scene, IMAGE_SIZE)
}

/// Renders at an arbitrary square resolution (the small gradient-check model uses 8).
pub fn render_scene_at(scene: &Scene, size: usize) -> Image {
    let mut img = Image::filled(size, size, BACKGROUND);
    for obj in &scene.objects {
        let color = obj.kind.color(obj.variant);
        for row in 0..size {
            for col in 0..size {
                if obj.contains(img.pixel_center(row, col)) {
                    img.set(row, col, color);
                }
            }
        }
    }
    img
}

fn shift_hue(rgb: Rgb, offset: f64) -> Rgb {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    if chroma == 0.0 {
        return rgb;
    }
    let hue = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    } / 6.0;
    let h = (hue + offset).rem_euclid(1.0) * 6.0;
    let x = chroma * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r1, g1, b1) = match h as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = min;
    [r1 + m, g1 + m, b1 + m]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    seed: u64,
    split: Split,
    objects: Vec<SceneObject>,
}

pub const SCENE_JSON: &str = "scene.json";
pub const SCENE_PNG: &str = "scene.png";

pub fn scene_to_json(scene: &Scene) -> String {
    let file = SceneFile {
        version: SCENE_SCHEMA_VERSION,
        seed: scene.seed,
        split: scene.split,
        objects: scene.objects.clone(),
    };
    serde_json::to_string_pretty(&file).expect("scene serializes")
}

pub fn scene_from_json(text: &str, path: &Path) -> Result<Scene> {
    let file: SceneFile =
        serde_json::from_str(text).map_err(|e| Error::schema(path, e.to_string()))?;
    if file.version != SCENE_SCHEMA_VERSION {
        return Err(Error::schema(
            path,
            format!("unsupported version {}", file.version),
        ));
    }
    Ok(Scene {
        objects: file.objects,
        seed: file.seed,
        split: file.split,
    })
}

pub fn scene_to_files(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(SCENE_JSON);
    fs::write(&json, scene_to_json(scene)).map_err(|e| Error::io(&json, e))?;
    write_png(&render_scene(scene), &dir.join(SCENE_PNG))
}

pub fn scene_from_files(dir: &Path) -> Result<Scene> {
    let json = dir.join(SCENE_JSON);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    scene_from_json(&text, &json)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        std::io::BufWriter::new(file),
        img.width as u32,
        img.height as u32,
    );
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::schema(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::schema(path, e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::schema(path, "expected 8-bit RGB"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = buf[..w * h * 3].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Image {
        height: h,
        width: w,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glass_at(cx: f64, cy: f64, radius: f64) -> SceneObject {
        SceneObject {
            kind: ObjectKind::Glass,
            cx,
            cy,
            radius,
            angle: 0.0,
            variant: Split::Train,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(7, Split::Train, ObjectCount::Exactly(4)).unwrap();
        let b = generate_scene(7, Split::Train, ObjectCount::Exactly(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), 4);
        assert!(invariant_violations(&a).is_empty());
    }

    #[test]
    fn zero_objects_is_rejected() {
        assert!(matches!(
            generate_scene(7, Split::Train, ObjectCount::Exactly(0)),
            Err(Error::Precondition(_))
        ));
        assert!(generate_scene(7, Split::Train, ObjectCount::Exactly(7)).is_err());
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = Scene {
            objects: vec![],
            seed: 0,
            split: Split::Train,
        };
        let img = render_scene(&scene);
        assert_eq!((img.height, img.width, img.pixels.len()), (100, 100, 30000));
        for p in img.pixels.chunks(3) {
            assert_eq!(p, BACKGROUND);
        }
    }

    #[test]
    fn glass_disk_matches_point_in_disk() {
        let scene = Scene {
            objects: vec![glass_at(0.5, 0.5, 0.06)],
            seed: 0,
            split: Split::Train,
        };
        let img = render_scene(&scene);
        let glass = ObjectKind::Glass.color(Split::Train);
        for row in 0..100 {
            for col in 0..100 {
                let x = (col as f64 + 0.5) / 100.0;
                let y = 1.0 - (row as f64 + 0.5) / 100.0;
                let inside = (x - 0.5).powi(2) + (y - 0.5).powi(2) <= 0.06f64.powi(2);
                let want = if inside { glass } else { BACKGROUND };
                assert_eq!(img.pixel(row, col), want, "pixel ({row},{col})");
            }
        }
        assert_eq!(render_scene(&scene), img);
    }

    #[test]
    fn occlusion_follows_list_order() {
        let mut plate = glass_at(0.5, 0.5, 0.12);
        plate.kind = ObjectKind::Plate;
        let scene = Scene {
            objects: vec![plate, glass_at(0.5, 0.5, 0.05)],
            seed: 0,
            split: Split::Train,
        };
        let img = render_scene(&scene);
        assert_eq!(img.pixel(50, 50), ObjectKind::Glass.color(Split::Train));
        assert_eq!(img.pixel(50, 40), ObjectKind::Plate.color(Split::Train));
    }

    #[test]
    fn palettes_are_disjoint() {
        let mut all: Vec<[u8; 3]> = vec![BACKGROUND.map(quantize)];
        for split in [Split::Train, Split::Test] {
            for k in ObjectKind::ALL {
                all.push(k.color(split).map(quantize));
            }
        }
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn hue_shift_round_trips_a_full_turn() {
        let c = [0.25, 0.45, 0.85];
        let back = shift_hue(c, 1.0);
        for i in 0..3 {
            assert!((back[i] - c[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rectangle_distance_cases() {
        let fork = SceneObject {
            kind: ObjectKind::Cutlery,
            cx: 0.5,
            cy: 0.5,
            radius: 0.12,
            angle: std::f64::consts::FRAC_PI_2,
            variant: Split::Train,
        };
        // long axis is vertical after a quarter turn
        assert!((fork.footprint_distance([0.5, 0.72]) - 0.10).abs() < 1e-12);
        assert!((fork.footprint_distance([0.62, 0.5]) - (0.12 - 0.02)).abs() < 1e-12);
        let corner = [0.5 + 0.02 + 0.03, 0.5 + 0.12 + 0.04];
        assert!((fork.footprint_distance(corner) - 0.05).abs() < 1e-12);
        assert!(fork.footprint_distance([0.5, 0.5]) < 0.0);
    }

    #[test]
    fn augment_adds_one_object() {
        let scene = generate_scene(11, Split::Train, ObjectCount::Exactly(2)).unwrap();
        let aug = augment_scene(&scene, ObjectKind::Glass, 3).unwrap();
        assert_eq!(aug.objects.len(), 3);
        assert_eq!(aug.objects[2].kind, ObjectKind::Glass);
        assert_eq!(&aug.objects[..2], &scene.objects[..]);
        assert!(invariant_violations(&aug).is_empty());
    }

    #[test]
    fn augment_fails_on_packed_scene() {
        let centers = [
            (0.174, 0.787),
            (0.455, 0.253),
            (0.791, 0.209),
            (0.545, 0.734),
            (0.178, 0.449),
            (0.833, 0.553),
        ];
        let objects: Vec<_> = centers
            .iter()
            .map(|&(cx, cy)| SceneObject {
                kind: ObjectKind::Plate,
                cx,
                cy,
                radius: 0.16,
                angle: 0.0,
                variant: Split::Train,
            })
            .collect();
        let scene = Scene {
            objects,
            seed: 1,
            split: Split::Train,
        };
        assert!(invariant_violations(&scene).is_empty());
        // brute force: no center on a fine grid admits even the smallest plate
        let r = ObjectKind::Plate.radius_range().0;
        let n = 201;
        for i in 0..n {
            for j in 0..n {
                let c = [r + (1.0 - 2.0 * r) * i as f64 / (n - 1) as f64, r + (1.0 - 2.0 * r) * j as f64 / (n - 1) as f64];
                let free = [P_INIT, P_FINAL].iter().all(|&e| dist(c, e) > r + ENDPOINT_CLEARANCE)
                    && scene.objects.iter().all(|o| dist(c, o.center()) > r + o.radius);
                assert!(!free, "free spot at {c:?}");
            }
        }
        assert!(matches!(
            augment_scene(&scene, ObjectKind::Plate, 5),
            Err(Error::PlacementFailure { .. })
        ));
    }

    #[test]
    fn corrupt_json_is_a_schema_error() {
        let p = Path::new("scene.json");
        assert!(matches!(
            scene_from_json("{\"version\":1,", p),
            Err(Error::Schema { .. })
        ));
        let wrong = r#"{"version":2,"seed":1,"split":"train","objects":[]}"#;
        assert!(matches!(scene_from_json(wrong, p), Err(Error::Schema { .. })));
    }
}
