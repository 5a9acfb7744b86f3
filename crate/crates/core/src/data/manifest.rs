//! Dataset manifests: per-split lists of image/mask/label files built from each
//! dataset's published directory layout, serialized as JSON lines.
//!
//! Manifest file schema (one JSON object per line):
//!
//! ```text
//! {"format":"lanet-manifest","version":1,"kind":"IDRiD-Seg","root":"/data/idrid"}
//! {"id":"IDRiD_01","split":"train","image":"A. Segmentation/1. Original Images/...","masks":{"EX":"..."},"label":null,"grade":null}
//! ...
//! ```
//!
//! Paths in entries are relative to `root`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ScreenLabel, Split};
use crate::error::{Error, Result};
use crate::lesion::Lesion;

/// Seed of the fixed shuffle used where a dataset ships no validation split.
pub const SPLIT_SEED: u64 = 20_220_419;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    #[serde(rename = "IDRiD-Seg")]
    IdridSeg,
    #[serde(rename = "DDR-Seg")]
    DdrSeg,
    #[serde(rename = "FGADR-Seg")]
    FgadrSeg,
    #[serde(rename = "DDR-Scr")]
    DdrScr,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::IdridSeg => "IDRiD-Seg",
            DatasetKind::DdrSeg => "DDR-Seg",
            DatasetKind::FgadrSeg => "FGADR-Seg",
            DatasetKind::DdrScr => "DDR-Scr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "idrid-seg" | "idrid" => Ok(DatasetKind::IdridSeg),
            "ddr-seg" => Ok(DatasetKind::DdrSeg),
            "fgadr-seg" | "fgadr" => Ok(DatasetKind::FgadrSeg),
            "ddr-scr" => Ok(DatasetKind::DdrScr),
            other => Err(Error::Config(format!(
                "unknown dataset `{other}` (expected IDRiD-Seg, DDR-Seg, FGADR-Seg or DDR-Scr)"
            ))),
        }
    }

    pub fn has_masks(self) -> bool {
        !matches!(self, DatasetKind::DdrScr)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub image: PathBuf,
    #[serde(default)]
    pub masks: BTreeMap<Lesion, PathBuf>,
    #[serde(default)]
    pub label: Option<ScreenLabel>,
    #[serde(default)]
    pub grade: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: DatasetKind,
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn label_count(&self, split: Split, label: ScreenLabel) -> usize {
        self.split(split).filter(|e| e.label == Some(label)).count()
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: "lanet-manifest".into(),
            version: 1,
            kind: self.kind,
            root: self.root.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::InvalidValue("empty manifest".into()))?,
        )
        .map_err(|e| Error::InvalidValue(format!("manifest header: {e}")))?;
        if header.format != "lanet-manifest" {
            return Err(Error::InvalidValue(format!("not a manifest: format `{}`", header.format)));
        }
        let entries = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::InvalidValue(format!("manifest line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<ManifestEntry>>>()?;
        Ok(Self {
            kind: header.kind,
            root: header.root,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::io::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// One line per split: counts, and per-label counts for screening data.
    pub fn summary(&self) -> String {
        let mut s = format!("{}\n", self.kind);
        for split in Split::ALL {
            if self.kind == DatasetKind::DdrScr {
                s.push_str(&format!(
                    "  {:<5} {:>6}  (NoDR {}, NPDR {})\n",
                    split.name(),
                    self.count(split),
                    self.label_count(split, ScreenLabel::NoDR),
                    self.label_count(split, ScreenLabel::NPDR)
                ));
            } else {
                s.push_str(&format!("  {:<5} {:>6}\n", split.name(), self.count(split)));
            }
        }
        s
    }

    fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            if self.count(split) == 0 {
                return Err(Error::NoEntries {
                    dataset: self.kind.name().into(),
                    split: split.name().into(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(Error::InvalidValue(format!("image id `{}` appears twice", e.id)));
            }
            for p in std::iter::once(&e.image).chain(e.masks.values()) {
                if !self.resolve(p).is_file() {
                    return Err(Error::MissingLayout {
                        root: self.root.clone(),
                        expected: p.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

const IMAGE_EXTS: [&str; 5] = ["jpg", "jpeg", "png", "tif", "tiff"];

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn require_dir(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = root.join(rel);
    if p.is_dir() {
        Ok(p)
    } else {
        Err(Error::MissingLayout {
            root: root.to_path_buf(),
            expected: rel.to_string(),
        })
    }
}

/// Image files in `dir`, sorted by file name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Finds a mask file `<dir>/<name>.<any image ext>`.
fn find_file(dir: &Path, name: &str) -> Option<PathBuf> {
    IMAGE_EXTS
        .iter()
        .flat_map(|e| [e.to_string(), e.to_ascii_uppercase()])
        .map(|e| dir.join(format!("{name}.{e}")))
        .find(|p| p.is_file())
}

/// Locates the directory containing `marker`, either `root` itself or `root/sub`.
fn locate_base(root: &Path, sub: &str, marker: &str) -> Result<PathBuf> {
    if root.join(marker).exists() {
        return Ok(root.to_path_buf());
    }
    let nested = root.join(sub);
    if nested.join(marker).exists() {
        return Ok(nested);
    }
    Err(Error::MissingLayout {
        root: root.to_path_buf(),
        expected: format!("{sub}/{marker}"),
    })
}

fn rel(root: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Splits `items` into parts with sizes proportional to `weights` after a fixed
/// shuffle. Rounding remainder goes to the last part.
fn proportional_split<T>(mut items: Vec<T>, weights: &[usize]) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SPLIT_SEED);
    items.shuffle(&mut rng);
    let n = items.len();
    let total: usize = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((n * w) as f64 / total as f64).round() as usize)
        .collect();
    let last = sizes.len() - 1;
    let head: usize = sizes[..last].iter().sum::<usize>().min(n);
    sizes[last] = n - head;
    let mut out = Vec::with_capacity(weights.len());
    let mut it = items.into_iter();
    for s in sizes {
        out.push(it.by_ref().take(s).collect());
    }
    out
}

/// Builds the manifest of a dataset from its on-disk layout.
pub fn build_manifest(root: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::MissingLayout {
            root: root.to_path_buf(),
            expected: "dataset root directory".into(),
        });
    }
    let root = root.canonicalize().map_err(|e| Error::io(root, e))?;
    let mut entries = match kind {
        DatasetKind::IdridSeg => idrid(&root)?,
        DatasetKind::DdrSeg => ddr_seg(&root)?,
        DatasetKind::FgadrSeg => fgadr(&root)?,
        DatasetKind::DdrScr => ddr_scr(&root)?,
    };
    entries.sort_by(|a, b| a.split.cmp(&b.split).then_with(|| a.id.cmp(&b.id)));
    let m = DatasetManifest { kind, root, entries };
    m.validate()?;
    Ok(m)
}

const IDRID_IMAGES: &str = "1. Original Images";
const IDRID_MASKS: &str = "2. All Segmentation Groundtruths";
const IDRID_TRAIN: &str = "a. Training Set";
const IDRID_TEST: &str = "b. Testing Set";

fn idrid_lesion_dir(l: Lesion) -> &'static str {
    match l {
        Lesion::MA => "1. Microaneurysms",
        Lesion::HE => "2. Haemorrhages",
        Lesion::EX => "3. Hard Exudates",
        Lesion::SE => "4. Soft Exudates",
    }
}

fn idrid(root: &Path) -> Result<Vec<ManifestEntry>> {
    let base = locate_base(root, "A. Segmentation", IDRID_IMAGES)?;
    let mut out = Vec::new();
    for (set, published_test) in [(IDRID_TRAIN, false), (IDRID_TEST, true)] {
        let img_dir = require_dir(&base, &format!("{IDRID_IMAGES}/{set}"))?;
        let mask_dir = require_dir(&base, &format!("{IDRID_MASKS}/{set}"))?;
        let mut group = Vec::new();
        for img in list_images(&img_dir)? {
            let id = stem(&img);
            let mut masks = BTreeMap::new();
            for l in Lesion::ALL {
                if let Some(p) = find_file(&mask_dir.join(idrid_lesion_dir(l)), &format!("{id}_{}", l.code())) {
                    masks.insert(l, rel(root, &p));
                }
            }
            group.push(ManifestEntry {
                id,
                split: Split::Test,
                image: rel(root, &img),
                masks,
                label: None,
                grade: None,
            });
        }
        if published_test {
            out.extend(group);
        } else {
            // published training set → 40 train / 14 valid
            let parts = proportional_split(group, &[40, 14]);
            for (split, part) in [Split::Train, Split::Valid].into_iter().zip(parts) {
                out.extend(part.into_iter().map(|e| ManifestEntry { split, ..e }));
            }
        }
    }
    Ok(out)
}

fn ddr_seg(root: &Path) -> Result<Vec<ManifestEntry>> {
    let base = locate_base(root, "lesion_segmentation", "train")?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let img_dir = require_dir(&base, &format!("{}/image", split.name()))?;
        let label_dir = require_dir(&base, &format!("{}/label", split.name()))?;
        for img in list_images(&img_dir)? {
            let id = stem(&img);
            let mut masks = BTreeMap::new();
            for l in Lesion::ALL {
                if let Some(p) = find_file(&label_dir.join(l.code()), &id) {
                    masks.insert(l, rel(root, &p));
                }
            }
            out.push(ManifestEntry {
                id,
                split,
                image: rel(root, &img),
                masks,
                label: None,
                grade: None,
            });
        }
    }
    Ok(out)
}

fn ddr_scr(root: &Path) -> Result<Vec<ManifestEntry>> {
    let base = locate_base(root, "DR_grading", "train.txt")?;
    let mut out = Vec::new();
    for split in Split::ALL {
        let list = base.join(format!("{}.txt", split.name()));
        let text = fs::read_to_string(&list).map_err(|_| Error::MissingLayout {
            root: base.clone(),
            expected: format!("{}.txt", split.name()),
        })?;
        let img_dir = require_dir(&base, split.name())?;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(grade)) = (parts.next(), parts.next()) else {
                return Err(Error::InvalidValue(format!("{}:{}: expected `<file> <grade>`", list.display(), ln + 1)));
            };
            let grade: u8 = grade
                .parse()
                .map_err(|_| Error::InvalidValue(format!("{}:{}: bad grade `{grade}`", list.display(), ln + 1)))?;
            let Some(label) = ScreenLabel::from_grade(grade) else { continue };
            out.push(ManifestEntry {
                id: stem(Path::new(name)),
                split,
                image: rel(root, &img_dir.join(name)),
                masks: BTreeMap::new(),
                label: Some(label),
                grade: Some(grade),
            });
        }
    }
    Ok(out)
}

fn fgadr_lesion_dir(l: Lesion) -> &'static str {
    match l {
        Lesion::EX => "HardExudate_Masks",
        Lesion::HE => "Hemohedge_Masks",
        Lesion::MA => "Microaneurysms_Masks",
        Lesion::SE => "SoftExudate_Masks",
    }
}

const FGADR_LABELS: &str = "DR_Seg_Grading_Label.csv";

fn fgadr(root: &Path) -> Result<Vec<ManifestEntry>> {
    let base = locate_base(root, "Seg-set", "Original_Images")?;
    let img_dir = require_dir(&base, "Original_Images")?;
    let label_path = base.join(FGADR_LABELS);
    let text = fs::read_to_string(&label_path).map_err(|_| Error::MissingLayout {
        root: base.clone(),
        expected: FGADR_LABELS.into(),
    })?;
    let mut grades = BTreeMap::new();
    for line in text.lines() {
        let mut cols = line.split(',').map(str::trim);
        if let (Some(name), Some(g)) = (cols.next(), cols.next()) {
            if let Ok(g) = g.parse::<u8>() {
                grades.insert(stem(Path::new(name)), g);
            }
        }
    }
    let mut retained = Vec::new();
    for img in list_images(&img_dir)? {
        let id = stem(&img);
        let grade = grades.get(&id).copied();
        if grade == Some(4) {
            continue; // proliferative DR
        }
        let mut masks = BTreeMap::new();
        for l in Lesion::ALL {
            if let Some(p) = find_file(&base.join(fgadr_lesion_dir(l)), &id) {
                masks.insert(l, rel(root, &p));
            }
        }
        retained.push(ManifestEntry {
            id,
            split: Split::Train,
            image: rel(root, &img),
            masks,
            label: None,
            grade,
        });
    }
    let parts = proportional_split(retained, &[920, 369, 553]);
    Ok(Split::ALL
        .into_iter()
        .zip(parts)
        .flat_map(|(split, part)| part.into_iter().map(move |e| ManifestEntry { split, ..e }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_split_sizes() {
        let parts = proportional_split((0..54).collect::<Vec<_>>(), &[40, 14]);
        assert_eq!(parts[0].len(), 40);
        assert_eq!(parts[1].len(), 14);
        let parts = proportional_split((0..1842).collect::<Vec<_>>(), &[920, 369, 553]);
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![920, 369, 553]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(DatasetKind::parse("idrid-seg").unwrap(), DatasetKind::IdridSeg);
        assert_eq!(DatasetKind::parse("DDR_Scr").unwrap(), DatasetKind::DdrScr);
        assert!(DatasetKind::parse("kaggle").is_err());
    }

    #[test]
    fn empty_dir_has_no_entries() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_manifest(dir.path(), DatasetKind::IdridSeg).is_err());
        for s in ["train", "valid", "test"] {
            fs::create_dir_all(dir.path().join(s).join("image")).unwrap();
            fs::create_dir_all(dir.path().join(s).join("label")).unwrap();
        }
        let err = build_manifest(dir.path(), DatasetKind::DdrSeg).unwrap_err();
        assert!(err.to_string().contains("no entries"), "{err}");
    }

    #[test]
    fn missing_subfolder_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("train")).unwrap();
        let err = build_manifest(dir.path(), DatasetKind::DdrSeg).unwrap_err();
        assert!(err.to_string().contains("train/image"), "{err}");
    }
}
