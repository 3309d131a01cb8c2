//! Feature-file ingestion, synthetic domain generation, and split handling.
//!
//! Binary feature files ("FDFX") carry a feature matrix, integer class
//! labels, and a modality tag. Features are stored as 32-bit floats — a
//! file-format width only; everything in memory is 64-bit. A CSV alternative
//! (rows of `d_in` reals followed by an integer label) is accepted wherever
//! the modality is known from context.

use crate::matrix::Matrix;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Acoustic,
}

impl Modality {
    pub fn tag_byte(self) -> u8 {
        match self {
            Modality::Visual => 0,
            Modality::Acoustic => 1,
        }
    }

    pub fn from_tag_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Modality::Visual),
            1 => Ok(Modality::Acoustic),
            other => Err(Error::Format(format!("unknown modality tag byte {other}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Acoustic => "acoustic",
        }
    }
}

/// A labeled feature matrix for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDomain {
    pub features: Matrix,
    /// One-hot labels, `n x C`.
    pub labels: Matrix,
    pub class_names: Vec<String>,
    pub modality: Modality,
}

impl FeatureDomain {
    pub fn from_indices(
        features: Matrix,
        label_indices: &[usize],
        classes: usize,
        class_names: Vec<String>,
        modality: Modality,
    ) -> Result<Self> {
        if features.rows() != label_indices.len() {
            return Err(Error::ShapeMismatch {
                op: "feature_domain",
                lhs: features.shape_string(),
                rhs: format!("{} labels", label_indices.len()),
            });
        }
        if features.rows() == 0 {
            return Err(Error::InvalidParameter("empty feature domain".into()));
        }
        if class_names.len() != classes {
            return Err(Error::Config(format!(
                "class-name list has {} entries for {} classes",
                class_names.len(),
                classes
            )));
        }
        let mut labels = Matrix::zeros(label_indices.len(), classes);
        for (i, &c) in label_indices.iter().enumerate() {
            if c >= classes {
                return Err(Error::Label {
                    row: i,
                    msg: format!("class index {c} out of range [0, {classes})"),
                });
            }
            labels.set(i, c, 1.0);
        }
        Ok(FeatureDomain {
            features,
            labels,
            class_names,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.labels.cols()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        (0..self.labels.rows())
            .map(|i| {
                (0..self.labels.cols())
                    .find(|&c| self.labels.get(i, c) == 1.0)
                    .expect("one-hot row")
            })
            .collect()
    }

    /// Sub-domain made of the given sample rows.
    pub fn select(&self, indices: &[usize]) -> FeatureDomain {
        FeatureDomain {
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            class_names: self.class_names.clone(),
            modality: self.modality,
        }
    }
}

fn default_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class_{c}")).collect()
}

// ── Binary feature format ───────────────────────────────────────────────
//
// magic "FDFX", version u32 LE = 1, n, d_in, C as u32 LE, modality tag byte
// (0 visual / 1 acoustic), features as n*d_in f32 LE row-major, labels as n
// u32 LE class indices in [0, C).

const FEATURE_MAGIC: &[u8; 4] = b"FDFX";
const FEATURE_VERSION: u32 = 1;

pub fn save_feature_file(domain: &FeatureDomain, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(domain.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(domain.feature_width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(domain.class_count() as u32).to_le_bytes());
    bytes.push(domain.modality.tag_byte());
    for &v in domain.features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for c in domain.label_indices() {
        bytes.extend_from_slice(&(c as u32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn load_feature_file(path: &Path) -> Result<FeatureDomain> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;

    let magic = take(&mut cursor, &bytes, 4)?;
    if magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad feature-file magic {:?}, expected {:?}",
            magic, FEATURE_MAGIC
        )));
    }
    let version = read_u32(&mut cursor, &bytes)?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature-file version {version}"
        )));
    }
    let n = read_u32(&mut cursor, &bytes)? as usize;
    let d_in = read_u32(&mut cursor, &bytes)? as usize;
    let classes = read_u32(&mut cursor, &bytes)? as usize;
    let modality = Modality::from_tag_byte(take(&mut cursor, &bytes, 1)?[0])?;
    if n == 0 || d_in == 0 || classes == 0 {
        return Err(Error::Format(format!(
            "degenerate header: n={n}, d_in={d_in}, C={classes}"
        )));
    }

    let mut data = Vec::with_capacity(n * d_in);
    for _ in 0..n * d_in {
        let chunk = take(&mut cursor, &bytes, 4)?;
        let mut buf = [0u8; 4];
        buf.copy_from_slice(chunk);
        data.push(f32::from_le_bytes(buf) as f64);
    }
    let features = Matrix::from_vec(n, d_in, data)?;

    let mut label_indices = Vec::with_capacity(n);
    for i in 0..n {
        let c = read_u32(&mut cursor, &bytes)? as usize;
        if c >= classes {
            return Err(Error::Label {
                row: i,
                msg: format!("class index {c} out of range [0, {classes})"),
            });
        }
        label_indices.push(c);
    }
    if cursor != bytes.len() {
        return Err(Error::Format(format!(
            "trailing bytes in feature file: {} unread",
            bytes.len() - cursor
        )));
    }
    FeatureDomain::from_indices(
        features,
        &label_indices,
        classes,
        default_class_names(classes),
        modality,
    )
}

/// CSV alternative: optional header line, then one row per sample with
/// `d_in` reals followed by an integer class label. The modality comes from
/// the caller (a CLI flag), and the class count is the largest label + 1.
pub fn load_feature_csv(path: &Path, modality: Modality) -> Result<FeatureDomain> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut label_indices: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        let Some(values) = parsed else {
            // A non-numeric line is only acceptable as a leading header.
            if rows.is_empty() && lineno == 0 {
                continue;
            }
            return Err(Error::Format(format!(
                "line {}: non-numeric field in CSV body",
                lineno + 1
            )));
        };
        if values.len() < 2 {
            return Err(Error::Format(format!(
                "line {}: need at least one feature and a label",
                lineno + 1
            )));
        }
        let d = values.len() - 1;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::Format(format!(
                    "line {}: row width {d} differs from first row width {w}",
                    lineno + 1
                )));
            }
            _ => {}
        }
        let label = values[d];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Label {
                row: rows.len(),
                msg: format!("label {label} is not a nonnegative integer"),
            });
        }
        label_indices.push(label as usize);
        rows.push(values[..d].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::Format("CSV contains no samples".into()));
    }
    let classes = label_indices.iter().max().unwrap() + 1;
    FeatureDomain::from_indices(
        Matrix::from_rows(&rows)?,
        &label_indices,
        classes,
        default_class_names(classes),
        modality,
    )
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ── Multi-dataset concatenation ─────────────────────────────────────────

/// Concatenates several domains of the same modality into one source set.
/// Class-name lists must match exactly.
pub fn concat_domains(domains: &[FeatureDomain]) -> Result<FeatureDomain> {
    let first = domains
        .first()
        .ok_or_else(|| Error::Config("no domains to concatenate".into()))?;
    for d in &domains[1..] {
        if d.class_names != first.class_names {
            return Err(Error::Config(format!(
                "class-name lists differ: {:?} vs {:?}",
                first.class_names, d.class_names
            )));
        }
        if d.feature_width() != first.feature_width() {
            return Err(Error::Config(format!(
                "feature widths differ: {} vs {}",
                first.feature_width(),
                d.feature_width()
            )));
        }
        if d.modality != first.modality {
            return Err(Error::Config("mixed modalities in concatenation".into()));
        }
    }
    let features: Vec<&Matrix> = domains.iter().map(|d| &d.features).collect();
    let labels: Vec<&Matrix> = domains.iter().map(|d| &d.labels).collect();
    Ok(FeatureDomain {
        features: Matrix::vstack(&features)?,
        labels: Matrix::vstack(&labels)?,
        class_names: first.class_names.clone(),
        modality: first.modality,
    })
}

// ── Stratified split ────────────────────────────────────────────────────

/// Per-class split into train/test with the given train fraction. Shuffles
/// within each class (seeded); every supported class keeps at least one test
/// sample unless it has only one sample, which then goes to the train side.
pub fn stratified_split(
    domain: &FeatureDomain,
    train_fraction: f64,
    seed: u64,
) -> Result<(FeatureDomain, FeatureDomain)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let labels = domain.label_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..domain.class_count() {
        let mut members: Vec<usize> = (0..domain.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let support = members.len();
        let test_count = if support == 1 {
            0
        } else {
            let rounded = ((1.0 - train_fraction) * support as f64).round() as usize;
            rounded.clamp(1, support - 1)
        };
        test_idx.extend_from_slice(&members[..test_count]);
        train_idx.extend_from_slice(&members[test_count..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config(
            "split produced an empty train or test side".into(),
        ));
    }
    Ok((domain.select(&train_idx), domain.select(&test_idx)))
}

// ── Synthetic domains ───────────────────────────────────────────────────

/// Generator settings for a paired synthetic task: both domains share class
/// structure; the second domain's class centers are rotated in the first two
/// coordinates and shifted along the first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub d_in: usize,
    pub samples_per_class: usize,
    #[serde(default = "SynthSpec::default_center_scale")]
    pub center_scale: f64,
    pub rotation_angle: f64,
    pub shift: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn default_center_scale() -> f64 {
        1.5
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        if self.samples_per_class < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 samples per class".into(),
            ));
        }
        if self.d_in < 2 || self.d_in < self.classes {
            return Err(Error::InvalidParameter(format!(
                "d_in must be >= max(2, classes), got {} for {} classes",
                self.d_in, self.classes
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidParameter("negative noise std".into()));
        }
        Ok(())
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 is kept away from 0.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws the paired (visual, acoustic) domains described by `spec`.
pub fn synth_domains(spec: &SynthSpec) -> Result<(FeatureDomain, FeatureDomain)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.classes;
    let d = spec.d_in;

    // Axis-aligned class centers: center_c = scale * e_c.
    let mut centers = Matrix::zeros(c, d);
    for k in 0..c {
        centers.set(k, k, spec.center_scale);
    }
    let (sin, cos) = spec.rotation_angle.sin_cos();
    let mut shifted = Matrix::zeros(c, d);
    for k in 0..c {
        for j in 0..d {
            shifted.set(k, j, centers.get(k, j));
        }
        let x0 = centers.get(k, 0);
        let x1 = centers.get(k, 1);
        shifted.set(k, 0, cos * x0 - sin * x1 + spec.shift);
        shifted.set(k, 1, sin * x0 + cos * x1);
    }

    let draw = |centers: &Matrix, modality: Modality, rng: &mut ChaCha8Rng| {
        let n = c * spec.samples_per_class;
        let mut features = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for k in 0..c {
            for _ in 0..spec.samples_per_class {
                for j in 0..d {
                    let v = centers.get(k, j) + spec.noise_std * standard_normal(rng);
                    features.set(row, j, v);
                }
                labels.push(k);
                row += 1;
            }
        }
        FeatureDomain::from_indices(features, &labels, c, default_class_names(c), modality)
    };

    let visual = draw(&centers, Modality::Visual, &mut rng)?;
    let acoustic = draw(&shifted, Modality::Acoustic, &mut rng)?;
    Ok((visual, acoustic))
}

// ── Shared little-endian readers ────────────────────────────────────────

fn take<'a>(cursor: &mut usize, bytes: &'a [u8], len: usize) -> Result<&'a [u8]> {
    if *cursor + len > bytes.len() {
        return Err(Error::Format(format!(
            "truncated file: wanted {} bytes at offset {}, have {}",
            len,
            cursor,
            bytes.len()
        )));
    }
    let slice = &bytes[*cursor..*cursor + len];
    *cursor += len;
    Ok(slice)
}

fn read_u32(cursor: &mut usize, bytes: &[u8]) -> Result<u32> {
    let chunk = take(cursor, bytes, 4)?;
    let mut buf = [0u8; 4];
    buf.copy_from_slice(chunk);
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{mmd_value, KernelSpec};

    fn small_domain() -> FeatureDomain {
        let features = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 4.0]]).unwrap();
        FeatureDomain::from_indices(
            features,
            &[0, 1],
            2,
            vec!["class_0".into(), "class_1".into()],
            Modality::Visual,
        )
        .unwrap()
    }

    #[test]
    fn index_to_one_hot() {
        let d = small_domain();
        assert_eq!(d.labels.row(0), &[1.0, 0.0]);
        assert_eq!(d.labels.row(1), &[0.0, 1.0]);
        assert_eq!(d.label_indices(), vec![0, 1]);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fdfx");
        let d = small_domain();
        save_feature_file(&d, &path).unwrap();
        let loaded = load_feature_file(&path).unwrap();
        // Values here are f32-representable so the round trip is exact.
        assert_eq!(loaded, d);
        // Writing the loaded domain again produces identical bytes.
        let path2 = dir.path().join("d2.fdfx");
        save_feature_file(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn loader_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fdfx");
        save_feature_file(&small_domain(), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'Z';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 7;
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Format(_))));

        // Label out of range: last u32 is the final label.
        let mut bad_label = good.clone();
        let n = bad_label.len();
        bad_label[n - 4] = 9;
        fs::write(&path, &bad_label).unwrap();
        assert!(matches!(
            load_feature_file(&path),
            Err(Error::Label { row: 1, .. })
        ));

        fs::write(&path, &good[..good.len() - 2]).unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Format(_))));
    }

    #[test]
    fn csv_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "1.0,2.0,0\n").unwrap();
        let d = load_feature_csv(&path, Modality::Acoustic).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.feature_width(), 2);
        assert_eq!(d.features.row(0), &[1.0, 2.0]);
        assert_eq!(d.label_indices(), vec![0]);
        assert_eq!(d.modality, Modality::Acoustic);
    }

    #[test]
    fn csv_header_and_round_trip_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "f0,f1,label\n0.125,-3.5,1\n2.25,0.75,0\n").unwrap();
        let d = load_feature_csv(&path, Modality::Visual).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.class_count(), 2);
        for (i, expected) in [[0.125, -3.5], [2.25, 0.75]].iter().enumerate() {
            for (j, &e) in expected.iter().enumerate() {
                assert!((d.features.get(i, j) - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_degenerate_spec_matches() {
        let spec = SynthSpec {
            classes: 3,
            d_in: 4,
            samples_per_class: 5,
            center_scale: 2.0,
            rotation_angle: 0.0,
            shift: 0.0,
            noise_std: 0.5,
            seed: 42,
        };
        let (v1, a1) = synth_domains(&spec).unwrap();
        let (v2, a2) = synth_domains(&spec).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(a1, a2);
        assert_eq!(v1.len(), 15);
        assert_eq!(a1.modality, Modality::Acoustic);
        // angle 0, shift 0: same class-center layout in both domains.
        let offsets: f64 = (0..3)
            .map(|k| {
                // Compare per-class means across domains; they estimate the
                // same center, so the gap stays small relative to noise.
                let label_v = v1.label_indices();
                let label_a = a1.label_indices();
                let mean = |d: &FeatureDomain, labels: &[usize]| {
                    let rows: Vec<usize> = (0..d.len()).filter(|&i| labels[i] == k).collect();
                    let selected = d.features.select_rows(&rows);
                    (0..selected.cols())
                        .map(|j| {
                            (0..selected.rows())
                                .map(|i| selected.get(i, j))
                                .sum::<f64>()
                                / selected.rows() as f64
                        })
                        .collect::<Vec<f64>>()
                };
                let mv = mean(&v1, &label_v);
                let ma = mean(&a1, &label_a);
                mv.iter()
                    .zip(&ma)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        assert!(offsets < 3.0, "class means drift too far: {offsets}");
    }

    #[test]
    fn shifted_domains_show_larger_discrepancy_than_split_halves() {
        let mut separated = 0;
        for seed in 0..20 {
            let spec = SynthSpec {
                classes: 2,
                d_in: 4,
                samples_per_class: 30,
                center_scale: 2.0,
                rotation_angle: 0.0,
                shift: 2.0, // 4 * noise_std
                noise_std: 0.5,
                seed,
            };
            let (v, a) = synth_domains(&spec).unwrap();
            let spec_k = KernelSpec::default();
            let cross = mmd_value(&v.features, &a.features, &spec_k).unwrap();
            // Even/odd halves share the class mix, so they estimate the same
            // distribution.
            let evens: Vec<usize> = (0..v.len()).step_by(2).collect();
            let odds: Vec<usize> = (1..v.len()).step_by(2).collect();
            let within = mmd_value(
                &v.features.select_rows(&evens),
                &v.features.select_rows(&odds),
                &spec_k,
            )
            .unwrap();
            if cross > within {
                separated += 1;
            }
        }
        assert!(separated >= 19, "separated only {separated}/20");
    }

    #[test]
    fn stratified_split_counts() {
        let spec = SynthSpec {
            classes: 3,
            d_in: 4,
            samples_per_class: 10,
            center_scale: 2.0,
            rotation_angle: 0.3,
            shift: 1.0,
            noise_std: 1.0,
            seed: 5,
        };
        let (_, a) = synth_domains(&spec).unwrap();
        let (train, test) = stratified_split(&a, 0.8, 7).unwrap();
        assert_eq!(train.len() + test.len(), a.len());
        let test_labels = test.label_indices();
        for c in 0..3 {
            let count = test_labels.iter().filter(|&&l| l == c).count();
            // round(0.2 * 10) = 2, within ±1 and at least 1.
            assert!((1..=3).contains(&count), "class {c} test count {count}");
        }
        // Deterministic per seed.
        let (train2, test2) = stratified_split(&a, 0.8, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn concat_checks_class_names() {
        let a = small_domain();
        let mut b = small_domain();
        let merged = concat_domains(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(merged.len(), 4);
        b.class_names[1] = "other".into();
        assert!(matches!(concat_domains(&[a, b]), Err(Error::Config(_))));
    }
}
