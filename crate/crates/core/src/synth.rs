//! Synthetic metallic-mesh images with injected defects and exact ground truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{load_gray, load_mask, save_gray, save_mask, write_atomic, BinaryMask, GrayImage};
use crate::MeshType;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub mesh_type: MeshType,
    pub period: usize,
    pub line_width: f64,
    pub image_size: usize,
    pub line_intensity: f64,
    pub background_intensity: f64,
    /// Peak-to-peak multiplicative tilt across the image width.
    pub illumination_gradient: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Ring radius for circular meshes; defaults to half the period, so
    /// neighbouring rings touch.
    #[serde(default)]
    pub ring_radius: Option<f64>,
}

impl MeshSpec {
    pub fn square() -> Self {
        Self {
            mesh_type: MeshType::Square,
            period: 8,
            line_width: 2.0,
            image_size: 256,
            line_intensity: 0.8,
            background_intensity: 0.2,
            illumination_gradient: 0.05,
            noise_sigma: 0.01,
            seed: 0,
            ring_radius: None,
        }
    }

    pub fn circular() -> Self {
        Self {
            mesh_type: MeshType::Circular,
            line_width: 1.5,
            ..Self::square()
        }
    }

    pub fn for_mesh(mesh: MeshType) -> Self {
        match mesh {
            MeshType::Square => Self::square(),
            MeshType::Circular => Self::circular(),
        }
    }

    pub fn radius(&self) -> f64 {
        self.ring_radius.unwrap_or(self.period as f64 / 2.0)
    }

    /// Integer radius interval that brackets the rings, for circle detection.
    pub fn radius_range(&self) -> (usize, usize) {
        let r = self.radius();
        ((r.floor() as usize).max(1), (r.ceil() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.line_width > 0.0 && self.line_width < self.period as f64) {
            return Err(Error::invalid("line_width", "must satisfy 0 < line_width < period"));
        }
        if self.period >= self.image_size {
            return Err(Error::invalid("period", "must be smaller than image_size"));
        }
        if self.line_intensity == self.background_intensity {
            return Err(Error::invalid("line_intensity", "must differ from background_intensity"));
        }
        for (name, v) in [("line_intensity", self.line_intensity), ("background_intensity", self.background_intensity)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "must lie in [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.illumination_gradient.abs() < 2.0) {
            return Err(Error::invalid("noise_sigma", "noise must be >= 0 and |gradient| < 2"));
        }
        if let Some(r) = self.ring_radius {
            if !(r > 0.0) {
                return Err(Error::invalid("ring_radius", "must be > 0"));
            }
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.image_size / self.period
    }

    /// Defect-free lattice pixels.
    pub fn lattice(&self) -> BinaryMask {
        let (n, p) = (self.image_size, self.period);
        match self.mesh_type {
            MeshType::Square => {
                let on: Vec<bool> = (0..n).map(|i| ((i % p) as f64) < self.line_width).collect();
                BinaryMask::from_fn(n, n, |y, x| on[y] || on[x])
            }
            MeshType::Circular => {
                let (r, half) = (self.radius(), self.line_width / 2.0);
                BinaryMask::from_fn(n, n, |y, x| {
                    let dy = (y % p) as f64 - (p / 2) as f64;
                    let dx = (x % p) as f64 - (p / 2) as f64;
                    (dy.hypot(dx) - r).abs() < half
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Vertical,
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Defect {
    /// Square mesh: the `line`-th vertical or horizontal line is cut over
    /// `length` pixels starting at `start` along the line.
    Gap {
        axis: Axis,
        line: usize,
        start: usize,
        length: usize,
    },
    /// Circular mesh: a wedge of the ring in lattice cell `(cell_y, cell_x)`
    /// starting at `start_angle` (radians) spanning `fraction` of the turn.
    Arc {
        cell_y: usize,
        cell_x: usize,
        start_angle: f64,
        fraction: f64,
    },
    /// Material blob filling a rectangle at line intensity.
    Block { y: usize, x: usize, height: usize, width: usize },
}

impl Defect {
    pub fn is_broken(&self) -> bool {
        !matches!(self, Defect::Block { .. })
    }

    /// Pixel rectangle `(y0, x0, y1, x1)` (exclusive ends) the defect may touch.
    fn bounds(&self, mesh: &MeshSpec) -> (usize, usize, usize, usize) {
        let p = mesh.period;
        match *self {
            Defect::Gap { axis, line, start, length } => {
                let w = mesh.line_width.ceil() as usize;
                match axis {
                    Axis::Vertical => (start, line * p, start + length, line * p + w),
                    Axis::Horizontal => (line * p, start, line * p + w, start + length),
                }
            }
            Defect::Arc { cell_y, cell_x, .. } => {
                let reach = (mesh.radius() + mesh.line_width).ceil() as usize;
                let (cy, cx) = (cell_y * p + p / 2, cell_x * p + p / 2);
                (cy.saturating_sub(reach), cx.saturating_sub(reach), cy + reach + 1, cx + reach + 1)
            }
            Defect::Block { y, x, height, width } => (y, x, y + height, x + width),
        }
    }

    fn footprint(&self, mesh: &MeshSpec) -> BinaryMask {
        let n = mesh.image_size;
        let (y0, x0, y1, x1) = self.bounds(mesh);
        let in_box = |y: usize, x: usize| (y0..y1).contains(&y) && (x0..x1).contains(&x);
        match *self {
            Defect::Arc { cell_y, cell_x, start_angle, fraction } => {
                let p = mesh.period;
                let (cy, cx) = ((cell_y * p + p / 2) as f64, (cell_x * p + p / 2) as f64);
                let reach = mesh.radius() + mesh.line_width;
                let span = std::f64::consts::TAU * fraction;
                BinaryMask::from_fn(n, n, |y, x| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    in_box(y, x)
                        && dy.hypot(dx) < reach
                        && (dy.atan2(dx) - start_angle).rem_euclid(std::f64::consts::TAU) < span
                })
            }
            _ => BinaryMask::from_fn(n, n, in_box),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Clean,
    Broken,
    Block,
    Mixed,
}

impl std::fmt::Display for DefectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DefectKind::Clean => "clean",
            DefectKind::Broken => "broken",
            DefectKind::Block => "block",
            DefectKind::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(DefectKind::Clean),
            "broken" => Ok(DefectKind::Broken),
            "block" => Ok(DefectKind::Block),
            "mixed" => Ok(DefectKind::Mixed),
            other => Err(Error::Dataset(format!("unknown defect kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub defects: Vec<Defect>,
}

impl DefectSpec {
    pub fn clean() -> Self {
        Self {
            kind: DefectKind::Clean,
            defects: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.defects.len()
    }
}

#[derive(Clone, Debug)]
pub struct Synthesized {
    pub image: GrayImage,
    pub gt_broken: BinaryMask,
    pub gt_block: BinaryMask,
}

fn validate_defects(mesh: &MeshSpec, spec: &DefectSpec) -> Result<()> {
    let n = mesh.image_size;
    let has_broken = spec.defects.iter().any(Defect::is_broken);
    let has_block = spec.defects.iter().any(|d| !d.is_broken());
    let consistent = match spec.kind {
        DefectKind::Clean => spec.defects.is_empty(),
        DefectKind::Broken => has_broken && !has_block,
        DefectKind::Block => has_block && !has_broken,
        DefectKind::Mixed => has_broken && has_block,
    };
    if !consistent {
        return Err(Error::InvalidDefect(format!("defect list does not match kind `{}`", spec.kind)));
    }
    for d in &spec.defects {
        let (_, _, y1, x1) = d.bounds(mesh);
        if y1 > n || x1 > n {
            return Err(Error::InvalidDefect(format!("{d:?} extends outside the {n}x{n} image")));
        }
        match (*d, mesh.mesh_type) {
            (Defect::Gap { line, length, .. }, MeshType::Square) => {
                if line >= mesh.cells() || length == 0 {
                    return Err(Error::InvalidDefect(format!("{d:?} is not on a mesh line")));
                }
            }
            (Defect::Arc { cell_y, cell_x, fraction, .. }, MeshType::Circular) => {
                if cell_y >= mesh.cells() || cell_x >= mesh.cells() || !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::InvalidDefect(format!("{d:?} is not on a ring")));
                }
            }
            (Defect::Block { height, width, .. }, _) => {
                if height == 0 || width == 0 {
                    return Err(Error::InvalidDefect("empty block".into()));
                }
            }
            _ => {
                return Err(Error::InvalidDefect(format!("{d:?} does not apply to a {} mesh", mesh.mesh_type)));
            }
        }
    }
    // Keep classes apart so ground truth stays unambiguous.
    for a in spec.defects.iter().filter(|d| d.is_broken()) {
        for b in spec.defects.iter().filter(|d| !d.is_broken()) {
            let (ay0, ax0, ay1, ax1) = a.bounds(mesh);
            let (by0, bx0, by1, bx1) = b.bounds(mesh);
            if ay0 < by1 && by0 < ay1 && ax0 < bx1 && bx0 < ax1 {
                return Err(Error::InvalidDefect(format!("{a:?} overlaps {b:?}")));
            }
        }
    }
    Ok(())
}

pub fn generate(mesh: &MeshSpec, defects: &DefectSpec) -> Result<Synthesized> {
    mesh.validate()?;
    validate_defects(mesh, defects)?;
    let n = mesh.image_size;
    let lattice = mesh.lattice();
    let mut metal = lattice.clone();
    let mut gt_broken = BinaryMask::zeros(n, n);
    let mut gt_block = BinaryMask::zeros(n, n);
    for d in &defects.defects {
        let fp = d.footprint(mesh);
        if d.is_broken() {
            let erased = fp.and(&lattice)?;
            metal = metal.and_not(&erased)?;
            gt_broken = gt_broken.or(&erased)?;
        } else {
            metal = metal.or(&fp)?;
            gt_block = gt_block.or(&fp.and_not(&lattice)?)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mesh.seed);
    let noise = Normal::new(0.0, mesh.noise_sigma).map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
    let denom = (n.max(2) - 1) as f64;
    let image = GrayImage::from_fn(n, n, |y, x| {
        let base = if metal.get(y, x) { mesh.line_intensity } else { mesh.background_intensity };
        let lit = base * (1.0 + mesh.illumination_gradient * (x as f64 / denom - 0.5));
        let v = if mesh.noise_sigma > 0.0 { lit + noise.sample(&mut rng) } else { lit };
        v.clamp(0.0, 1.0)
    });
    Ok(Synthesized {
        image,
        gt_broken,
        gt_block,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub kind: DefectKind,
    pub seed: u64,
    pub defects: Vec<Defect>,
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: GrayImage,
    pub gt_broken: BinaryMask,
    pub gt_block: BinaryMask,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn gt(&self) -> BinaryMask {
        self.gt_broken.or(&self.gt_block).expect("ground truth masks share dimensions")
    }
}

fn random_broken(mesh: &MeshSpec, rng: &mut ChaCha8Rng) -> Defect {
    let n = mesh.image_size;
    let cells = mesh.cells();
    match mesh.mesh_type {
        MeshType::Square => {
            let length = rng.gen_range(15..=30);
            Defect::Gap {
                axis: if rng.gen_bool(0.5) { Axis::Vertical } else { Axis::Horizontal },
                line: rng.gen_range(1..cells - 1),
                start: rng.gen_range(8..n - length - 8),
                length,
            }
        }
        MeshType::Circular => Defect::Arc {
            cell_y: rng.gen_range(2..cells - 2),
            cell_x: rng.gen_range(2..cells - 2),
            start_angle: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            fraction: 0.3,
        },
    }
}

fn random_block(mesh: &MeshSpec, rng: &mut ChaCha8Rng) -> Defect {
    let side = rng.gen_range(10..=16);
    let hi = mesh.image_size - side - 8;
    Defect::Block {
        y: rng.gen_range(8..hi),
        x: rng.gen_range(8..hi),
        height: side,
        width: side,
    }
}

fn random_defects(mesh: &MeshSpec, kind: DefectKind, rng: &mut ChaCha8Rng) -> DefectSpec {
    loop {
        let defects = match kind {
            DefectKind::Clean => Vec::new(),
            DefectKind::Broken => vec![random_broken(mesh, rng)],
            DefectKind::Block => vec![random_block(mesh, rng)],
            DefectKind::Mixed => vec![random_broken(mesh, rng), random_block(mesh, rng)],
        };
        let spec = DefectSpec { kind, defects };
        if validate_defects(mesh, &spec).is_ok() {
            return spec;
        }
    }
}

/// Per-kind counts for `n` images split by `mix` = (broken, block, mixed).
pub fn split_counts(n: usize, mix: (f64, f64, f64)) -> Result<[usize; 3]> {
    let (a, b, c) = mix;
    if [a, b, c].iter().any(|&v| !(v >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("mix", "proportions must be >= 0 and sum to 1"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let nb = ((n as f64) * a).round() as usize;
    let nk = (((n as f64) * b).round() as usize).min(n - nb.min(n));
    let nb = nb.min(n);
    Ok([nb, nk, n - nb - nk])
}

/// `n` images grouped broken, block, mixed; reproducible from `seed`.
pub fn make_dataset(n: usize, mesh: &MeshSpec, mix: (f64, f64, f64), seed: u64) -> Result<Vec<Sample>> {
    mesh.validate()?;
    let counts = split_counts(n, mix)?;
    let kinds = [DefectKind::Broken, DefectKind::Block, DefectKind::Mixed];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (kind, &count) in kinds.iter().zip(&counts) {
        for _ in 0..count {
            let image_seed: u64 = rng.gen();
            let spec = random_defects(mesh, *kind, &mut rng);
            let s = generate(&MeshSpec { seed: image_seed, ..*mesh }, &spec)?;
            out.push(Sample {
                image: s.image,
                gt_broken: s.gt_broken,
                gt_block: s.gt_block,
                meta: SampleMeta {
                    id: format!("img_{:03}", out.len()),
                    kind: *kind,
                    seed: image_seed,
                    defects: spec.defects,
                },
            });
        }
    }
    Ok(out)
}

/// SHA-256 over the quantized images and masks, hex encoded.
pub fn dataset_digest(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.meta.id.as_bytes());
        h.update(s.image.data().iter().map(|&v| crate::image::quantize(v)).collect::<Vec<u8>>());
        h.update(s.gt_broken.data().iter().map(|&b| b as u8).collect::<Vec<u8>>());
        h.update(s.gt_block.data().iter().map(|&b| b as u8).collect::<Vec<u8>>());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    kind: DefectKind,
    seed: u64,
    defects: String,
}

pub const MANIFEST: &str = "manifest.csv";
pub const MESH_FILE: &str = "mesh.json";

/// Writes `images/`, `gt_broken/`, `gt_block/` (PNG), `manifest.csv` and `mesh.json`.
pub fn write_dataset(dir: impl AsRef<Path>, mesh: &MeshSpec, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "gt_broken", "gt_block"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for s in samples {
        let file = format!("{}.png", s.meta.id);
        save_gray(&s.image, dir.join("images").join(&file))?;
        save_mask(&s.gt_broken, dir.join("gt_broken").join(&file))?;
        save_mask(&s.gt_block, dir.join("gt_block").join(&file))?;
        wtr.serialize(ManifestRow {
            id: s.meta.id.clone(),
            kind: s.meta.kind,
            seed: s.meta.seed,
            defects: serde_json::to_string(&s.meta.defects).expect("defects serialize"),
        })?;
    }
    let manifest = wtr.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST), &manifest)?;
    let mesh_json = serde_json::to_vec_pretty(mesh).expect("mesh spec serializes");
    write_atomic(&dir.join(MESH_FILE), &mesh_json)
}

/// Loads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(MeshSpec, Vec<Sample>)> {
    let dir = dir.as_ref();
    let mesh_path = dir.join(MESH_FILE);
    let mesh_bytes = fs::read(&mesh_path).map_err(|e| Error::io(&mesh_path, e))?;
    let mesh: MeshSpec =
        serde_json::from_slice(&mesh_bytes).map_err(|e| Error::Dataset(format!("{}: {e}", mesh_path.display())))?;
    let manifest_path = dir.join(MANIFEST);
    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut samples = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize::<ManifestRow>() {
        let row = row?;
        let file = format!("{}.png", row.id);
        let image = load_gray(dir.join("images").join(&file))?;
        let gt_broken = load_mask(dir.join("gt_broken").join(&file))?;
        let gt_block = load_mask(dir.join("gt_block").join(&file))?;
        if gt_broken.dims() != image.dims() || gt_block.dims() != image.dims() {
            return Err(Error::Dataset(format!("{}: ground truth dimensions differ from image", row.id)));
        }
        let defects = serde_json::from_str(&row.defects).map_err(|e| Error::Dataset(format!("{}: {e}", row.id)))?;
        samples.push(Sample {
            image,
            gt_broken,
            gt_block,
            meta: SampleMeta {
                id: row.id,
                kind: row.kind,
                seed: row.seed,
                defects,
            },
        });
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{}: manifest lists no images", manifest_path.display())));
    }
    Ok((mesh, samples))
}
