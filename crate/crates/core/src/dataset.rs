//! Dataset plumbing: OFF/XYZ ingestion, the synthetic five-class corpus, and
//! poisoned-dataset construction.
//!
//! The synthetic corpus stands in for a pre-aligned mesh benchmark: shapes are
//! generated upright (identity rotation), with a random translation and scale
//! that normalization removes again. Every non-sphere class carries a thin
//! radial fin at azimuth zero — a shared orientation landmark that gives pose
//! cues something to bind to; spheres stay featureless so the class remains a
//! pure-geometry baseline.

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_ball, Point, PointCloud, TriangleMesh};
use crate::rng::Rng;
use crate::trigger::TriggerSpec;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub label: usize,
}

/// A labeled split with its poisoning bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub poison_mask: Vec<bool>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>, split: Split) -> Result<Self> {
        let n_classes = class_names.len();
        if n_classes == 0 {
            return Err(Error::invalid("class list is empty"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= n_classes {
                return Err(Error::invalid(format!(
                    "sample {i} has label {} but only {n_classes} classes exist",
                    s.label
                )));
            }
        }
        let poison_mask = vec![false; samples.len()];
        Ok(LabeledDataset { samples, class_names, poison_mask, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_poisoned(&self) -> usize {
        self.poison_mask.iter().filter(|&&p| p).count()
    }
}

/// How a training split gets poisoned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    /// fraction M/N of samples to poison
    pub rate: f64,
    /// target label y_t
    pub target: usize,
    pub trigger: TriggerSpec,
    pub seed: u64,
}

impl PoisonPlan {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::invalid("poison rate must lie in (0, 1)"));
        }
        if self.target >= n_classes {
            return Err(Error::invalid(format!(
                "target class {} out of range for {n_classes} classes",
                self.target
            )));
        }
        Ok(())
    }
}

/// Pull a cloud back into the unit ball if a trigger inflated it; in-ball
/// clouds pass through untouched so isometric/interior triggers keep exact
/// coordinates.
pub fn renormalize_if_inflated(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.max_norm() > 1.0 + 1e-9 {
        normalize_unit_ball(cloud)
    } else {
        Ok(cloud.clone())
    }
}

/// Trigger one sample the way poisoning and evaluation both do: apply the
/// trigger, then re-normalize only when the result left the unit ball, since
/// every cloud entering the model is expected in normalized coordinates.
pub fn apply_trigger(trigger: &TriggerSpec, cloud: &PointCloud, plan_seed: u64, sample_tag: u64) -> Result<PointCloud> {
    renormalize_if_inflated(&trigger.apply(cloud, plan_seed, sample_tag)?)
}

/// Replace ⌊rate·N⌋ uniformly chosen non-target samples with their triggered
/// versions relabeled to the target. Everything else is untouched.
pub fn poison_dataset(train: &LabeledDataset, plan: &PoisonPlan) -> Result<LabeledDataset> {
    plan.validate(train.n_classes())?;
    let n = train.len();
    let m = (plan.rate * n as f64).floor() as usize;
    let mut out = train.clone();
    if m == 0 {
        return Ok(out);
    }
    let non_target: Vec<usize> = (0..n).filter(|&i| train.samples[i].label != plan.target).collect();
    if m > non_target.len() {
        return Err(Error::invalid(format!(
            "need {m} non-target samples to poison but only {} exist",
            non_target.len()
        )));
    }
    let mut rng = crate::rng::derive(plan.seed, &[0x5e1ec7]);
    let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, non_target.len(), m)
        .into_iter()
        .map(|j| non_target[j])
        .collect();
    picks.sort_unstable();
    for i in picks {
        out.samples[i].cloud = apply_trigger(&plan.trigger, &train.samples[i].cloud, plan.seed, i as u64)?;
        out.samples[i].label = plan.target;
        out.poison_mask[i] = true;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

pub const CLASS_NAMES: [&str; 5] = ["sphere", "cube", "cylinder", "cone", "torus"];

/// sphere is the conventional target class: it has no orientation landmark
pub const SPHERE: usize = 0;

fn sample_sphere(k: usize, rng: &mut Rng) -> Vec<Point> {
    // antithetic pairs: the centroid cancels exactly for even k, which keeps
    // the normalized sphere perfectly radius-uniform
    let m = k.div_ceil(2);
    let mut half = Vec::with_capacity(m);
    for _ in 0..m {
        let v = Point::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        half.push(if v.norm() == 0.0 { Point::new(1.0, 0.0, 0.0) } else { v.normalize() });
    }
    let mut pts = half.clone();
    pts.extend(half.iter().map(|v| -v));
    pts.truncate(k);
    pts
}

fn sample_cube(k: usize, rng: &mut Rng) -> Vec<Point> {
    (0..k)
        .map(|_| {
            let face: usize = rng.random_range(0..6);
            let u = rng.random_range(-1.0..1.0);
            let v = rng.random_range(-1.0..1.0);
            let ax = face / 2;
            let sgn = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
            let mut p = Point::zeros();
            p[ax] = sgn;
            p[(ax + 1) % 3] = u;
            p[(ax + 2) % 3] = v;
            p
        })
        .collect()
}

fn sample_cylinder(k: usize, rng: &mut Rng) -> Vec<Point> {
    let n_cap = k / 5;
    let mut pts = Vec::with_capacity(k);
    for _ in 0..n_cap {
        let r = 0.45 * rng.random::<f64>().sqrt();
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let z = if rng.random::<f64>() < 0.5 { 0.9 } else { -0.9 };
        pts.push(Point::new(r * t.cos(), r * t.sin(), z));
    }
    for _ in n_cap..k {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let z = rng.random_range(-0.9..0.9);
        pts.push(Point::new(0.45 * t.cos(), 0.45 * t.sin(), z));
    }
    pts
}

fn sample_cone(k: usize, rng: &mut Rng) -> Vec<Point> {
    let n_base = k / 4;
    let mut pts = Vec::with_capacity(k);
    for _ in 0..n_base {
        let r = 0.8 * rng.random::<f64>().sqrt();
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        pts.push(Point::new(r * t.cos(), r * t.sin(), -1.0));
    }
    for _ in n_base..k {
        // area-weighted along the slant: radius grows linearly apex→rim
        let u = rng.random::<f64>().sqrt();
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        pts.push(Point::new(0.8 * u * t.cos(), 0.8 * u * t.sin(), 1.0 - 2.0 * u));
    }
    pts
}

fn sample_torus(k: usize, rng: &mut Rng) -> Vec<Point> {
    // slim tube: the smaller surface area keeps the per-point sampling dense,
    // so genuine outliers (e.g. injected clusters) stand out to kNN filters
    let (big_r, small_r) = (0.8, 0.2);
    let mut pts = Vec::with_capacity(k);
    while pts.len() < k {
        let u = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..std::f64::consts::TAU);
        // rejection keeps the surface measure uniform (outer rim is larger)
        if rng.random::<f64>() < (big_r + small_r * v.cos()) / (big_r + small_r) {
            let ring = big_r + small_r * v.cos();
            pts.push(Point::new(ring * u.cos(), ring * u.sin(), small_r * v.sin()));
        }
    }
    pts
}

/// Overwrite the first `n_fin` points with a thin radial blade at azimuth 0,
/// spanning 0.95–1.4× the shape's radial extent and tapering in z.
fn add_fin(pts: &mut [Point], n_fin: usize, rng: &mut Rng) {
    let rx = pts
        .iter()
        .map(|p| p.xy().norm())
        .fold(0.0, f64::max);
    for i in 0..n_fin.min(pts.len()) {
        let t = rng.random::<f64>();
        let u = rng.random_range(-1.0..1.0);
        let y = rng.random_range(-0.02..0.02);
        pts[i] = Point::new((0.95 + 0.45 * t) * rx, y, u * 0.16 * (1.0 - t) * rx);
    }
}

/// One synthetic sample: surface points, the fin landmark (non-sphere
/// classes), a random translate-and-scale pose, surface noise, then unit-ball
/// normalization.
pub fn make_cloud(class: usize, k: usize, noise_sigma: f64, rng: &mut Rng) -> Result<PointCloud> {
    if class >= CLASS_NAMES.len() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    if k < 2 {
        return Err(Error::invalid("need at least 2 points per cloud"));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::invalid("noise sigma must be nonnegative and finite"));
    }
    let mut pts = match class {
        0 => sample_sphere(k, rng),
        1 => sample_cube(k, rng),
        2 => sample_cylinder(k, rng),
        3 => sample_cone(k, rng),
        _ => sample_torus(k, rng),
    };
    if class != SPHERE {
        add_fin(&mut pts, k / 16, rng);
    }
    let scale = rng.random_range(0.8..1.2);
    let shift = Point::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    );
    for p in pts.iter_mut() {
        *p = *p * scale + shift;
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("validated sigma");
        for p in pts.iter_mut() {
            for c in 0..3 {
                p[c] += normal.sample(rng);
            }
        }
    }
    normalize_unit_ball(&PointCloud::new(pts)?)
}

/// Balanced five-class corpus; sample i carries label i mod 5 and is drawn
/// fully before sample i+1, so a fixed rng seed pins every byte.
pub fn generate_synthetic_corpus(
    per_class: usize,
    k: usize,
    noise_sigma: f64,
    rng: &mut Rng,
    split: Split,
) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    let c = CLASS_NAMES.len();
    let n = per_class * c;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % c;
        samples.push(Sample { cloud: make_cloud(label, k, noise_sigma, rng)?, label });
    }
    LabeledDataset::new(samples, CLASS_NAMES.iter().map(|s| s.to_string()).collect(), split)
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Parse an OFF mesh. Accepts both the split header ("OFF" then counts) and
/// the fused variant where the counts share the first line. Polygon faces
/// are fan-triangulated.
pub fn load_off(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (header_no, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if !header.starts_with("OFF") {
        return Err(parse_err(path, header_no, "missing OFF header"));
    }
    let rest = header["OFF".len()..].trim();
    let (counts_no, counts_line) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(path, header_no, "missing counts after OFF header"))?
    } else {
        (header_no, rest)
    };
    let counts: Vec<&str> = counts_line.split_whitespace().collect();
    if counts.len() != 3 {
        return Err(parse_err(path, counts_no, "expected `vertices faces edges` counts"));
    }
    let n_vertices: usize = counts[0]
        .parse()
        .map_err(|_| parse_err(path, counts_no, "bad vertex count"))?;
    let n_faces: usize = counts[1]
        .parse()
        .map_err(|_| parse_err(path, counts_no, "bad face count"))?;
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, counts_no, "file ends before all vertices"))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(parse_err(path, no, format!("expected 3 coordinates, found {}", cols.len())));
        }
        let mut p = [0.0; 3];
        for (c, col) in cols.iter().enumerate() {
            p[c] = col
                .parse()
                .map_err(|_| parse_err(path, no, format!("bad coordinate `{col}`")))?;
        }
        vertices.push(Point::new(p[0], p[1], p[2]));
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, counts_no, "file ends before all faces"))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        let arity: usize = cols
            .first()
            .ok_or_else(|| parse_err(path, no, "empty face line"))?
            .parse()
            .map_err(|_| parse_err(path, no, "bad face arity"))?;
        if arity < 3 || cols.len() != arity + 1 {
            return Err(parse_err(path, no, format!("face lists {arity} vertices but line has {} indices", cols.len() - 1)));
        }
        let mut idx = Vec::with_capacity(arity);
        for col in &cols[1..] {
            let i: usize = col
                .parse()
                .map_err(|_| parse_err(path, no, format!("bad vertex index `{col}`")))?;
            if i >= vertices.len() {
                return Err(parse_err(path, no, format!("vertex index {i} out of range")));
            }
            idx.push(i);
        }
        for j in 1..arity - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    if let Some((no, _)) = lines.next() {
        return Err(parse_err(path, no, "unexpected trailing content"));
    }
    Ok(TriangleMesh { vertices, faces })
}

/// Parse a whitespace-separated XYZ point list; `#` lines are comments.
pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 columns, found {}", cols.len())));
        }
        let mut p = [0.0; 3];
        for (c, col) in cols.iter().enumerate() {
            p[c] = col
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad float `{col}`")))?;
        }
        pts.push(Point::new(p[0], p[1], p[2]));
    }
    if pts.is_empty() {
        return Err(parse_err(path, 1, "no points in file"));
    }
    Ok(PointCloud::from_points_unchecked(pts))
}

/// Write XYZ with shortest-round-trip float formatting, so load_xyz returns
/// the exact same values.
pub fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = String::new();
    for p in cloud.points() {
        buf.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// One manifest line: where a sample lives, its class, and its split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub split: String,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e| csv_err(path, e))?);
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => parse_err(path, 0, format!("{other:?}")),
    }
}

/// Load a manifest's files into train/test splits. Labels are assigned by
/// sorted class name; OFF meshes are surface-sampled to `mesh_k` points with
/// a per-file derived rng; every cloud is unit-ball normalized.
pub fn load_manifest_dataset(
    manifest: &Path,
    base_dir: &Path,
    mesh_k: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let rows = read_manifest(manifest)?;
    if rows.is_empty() {
        return Err(parse_err(manifest, 0, "manifest has no rows"));
    }
    let mut class_names: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    class_names.sort();
    class_names.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let label = class_names
            .iter()
            .position(|c| *c == row.label)
            .expect("label came from this list");
        let file = base_dir.join(&row.path);
        let cloud = if file.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
            let mesh = load_off(&file)?;
            let mut rng = crate::rng::derive(seed, &[0x0ff, i as u64]);
            crate::geometry::sample_mesh_surface(&mesh, mesh_k, &mut rng)?
        } else {
            load_xyz(&file)?
        };
        let cloud = normalize_unit_ball(&cloud)?;
        match row.split.as_str() {
            "train" => train.push(Sample { cloud, label }),
            "test" => test.push(Sample { cloud, label }),
            other => return Err(parse_err(manifest, i + 2, format!("unknown split `{other}`"))),
        }
    }
    Ok((
        LabeledDataset::new(train, class_names.clone(), Split::Train)?,
        LabeledDataset::new(test, class_names, Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::trigger::{RotationTriggerParams, WltParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn sphere_with_zero_noise_is_radius_uniform() {
        let mut rng = from_seed(1);
        let cloud = make_cloud(SPHERE, 128, 0.0, &mut rng).unwrap();
        let r0 = cloud.points()[0].norm();
        for p in cloud.points() {
            assert_abs_diff_eq!(p.norm(), r0, epsilon = 1e-6);
        }
    }

    #[test]
    fn corpus_is_balanced() {
        let mut rng = from_seed(2);
        let ds = generate_synthetic_corpus(4, 64, 0.01, &mut rng, Split::Train).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.n_classes(), 5);
        for c in 0..5 {
            assert_eq!(ds.samples.iter().filter(|s| s.label == c).count(), 4);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_synthetic_corpus(2, 64, 0.01, &mut from_seed(3), Split::Train).unwrap();
        let b = generate_synthetic_corpus(2, 64, 0.01, &mut from_seed(3), Split::Train).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_clouds_are_normalized() {
        let ds = generate_synthetic_corpus(1, 128, 0.01, &mut from_seed(4), Split::Test).unwrap();
        for s in &ds.samples {
            assert_abs_diff_eq!(s.cloud.max_norm(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s.cloud.centroid().norm(), 0.0, epsilon = 1e-9);
        }
    }

    fn plan(rate: f64, seed: u64) -> PoisonPlan {
        PoisonPlan { rate, target: 0, trigger: TriggerSpec::Wlt(WltParams::default()), seed }
    }

    #[test]
    fn poison_counts_and_labels() {
        let ds = generate_synthetic_corpus(40, 64, 0.01, &mut from_seed(5), Split::Train).unwrap();
        let poisoned = poison_dataset(&ds, &plan(0.1, 7)).unwrap();
        assert_eq!(poisoned.len(), 200);
        assert_eq!(poisoned.n_poisoned(), 20);
        for (i, flagged) in poisoned.poison_mask.iter().enumerate() {
            if *flagged {
                assert_eq!(poisoned.samples[i].label, 0);
                assert_ne!(ds.samples[i].label, 0, "poisoning touched a target-class sample");
                assert_ne!(poisoned.samples[i].cloud, ds.samples[i].cloud);
            } else {
                assert_eq!(poisoned.samples[i], ds.samples[i]);
            }
        }
    }

    #[test]
    fn poison_zero_m_is_identity() {
        let ds = generate_synthetic_corpus(2, 64, 0.01, &mut from_seed(6), Split::Train).unwrap();
        let poisoned = poison_dataset(&ds, &plan(0.05, 1)).unwrap(); // floor(0.5) = 0
        assert_eq!(poisoned, ds);
    }

    #[test]
    fn poison_selection_is_deterministic() {
        let ds = generate_synthetic_corpus(8, 64, 0.01, &mut from_seed(7), Split::Train).unwrap();
        let a = poison_dataset(&ds, &plan(0.1, 9)).unwrap();
        let b = poison_dataset(&ds, &plan(0.1, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_trigger_renormalizes_only_inflated_clouds() {
        let ds = generate_synthetic_corpus(1, 64, 0.01, &mut from_seed(8), Split::Train).unwrap();
        let cloud = &ds.samples[0].cloud;
        // scale-5 local transform blows the cloud up; the model wants unit-ball input
        let wlt = TriggerSpec::Wlt(WltParams::default());
        assert!(wlt.apply(cloud, 3, 0).unwrap().max_norm() > 1.0 + 1e-6);
        let out = apply_trigger(&wlt, cloud, 3, 0).unwrap();
        assert_abs_diff_eq!(out.max_norm(), 1.0, epsilon = 1e-12);
        // an isometric trigger keeps exact coordinates end to end
        let rot = TriggerSpec::Rotation(RotationTriggerParams::default());
        assert_eq!(
            apply_trigger(&rot, cloud, 3, 0).unwrap(),
            rot.apply(cloud, 3, 0).unwrap()
        );
    }

    fn write_tmp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pointblank-dataset-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn off_minimal_triangle() {
        let path = write_tmp("tri.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let mesh = load_off(&path).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn off_quad_fans_into_two_triangles() {
        let path = write_tmp("quad.off", "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
        let mesh = load_off(&path).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_fused_header_parses_identically() {
        let split = load_off(&write_tmp("s.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")).unwrap();
        let fused = load_off(&write_tmp("f.off", "OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")).unwrap();
        assert_eq!(split.vertices, fused.vertices);
        assert_eq!(split.faces, fused.faces);
    }

    #[test]
    fn off_errors_carry_line_numbers() {
        let path = write_tmp("bad.off", "OFF\n3 1 0\n0 0 0\n1 0 nope\n0 1 0\n3 0 1 2\n");
        match load_off(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(load_off(&write_tmp("hdr.off", "PLY\n3 1 0\n")).is_err());
    }

    #[test]
    fn xyz_roundtrip_is_exact() {
        let mut rng = from_seed(9);
        let cloud = make_cloud(1, 32, 0.01, &mut rng).unwrap();
        let path = std::env::temp_dir().join("pointblank-dataset-tests").join("rt.xyz");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_xyz(&path, &cloud).unwrap();
        assert_eq!(load_xyz(&path).unwrap(), cloud);
    }

    #[test]
    fn xyz_skips_comments_and_counts_lines() {
        let path = write_tmp("pts.xyz", "# header\n0 0 0\n1 0 0\n\n# trailing\n0 1 0\n");
        let cloud = load_xyz(&path).unwrap();
        assert_eq!(cloud.len(), 3);
        let bad = write_tmp("bad.xyz", "0 0 0\n1 0\n");
        match load_xyz(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let rows = vec![
            ManifestRow { path: "sphere/s0.xyz".into(), label: "sphere".into(), split: "train".into() },
            ManifestRow { path: "cube/c0.xyz".into(), label: "cube".into(), split: "test".into() },
        ];
        let path = std::env::temp_dir().join("pointblank-dataset-tests").join("m.csv");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_manifest(&path, &rows).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), rows);
    }
}
