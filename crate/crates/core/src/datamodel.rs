//! Label classes, samples and dataset manifests.
//!
//! A manifest is a JSON document whose sample paths are relative to the
//! manifest's own directory. Masks are 8-bit single-channel PNGs where the
//! pixel value is the class id; images are 8-bit RGB PNGs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub type ClassId = u8;

/// Pixel count per class id. Every class of the owning [`ClassSet`] has an entry.
pub type ClassHistogram = BTreeMap<ClassId, u64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    pub is_foreground: bool,
}

/// Ordered label classes. Ids run consecutively from 0, and 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassEntry>", into = "Vec<ClassEntry>")]
pub struct ClassSet {
    entries: Vec<ClassEntry>,
}

impl ClassSet {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Manifest("class set is empty".into()));
        }
        if entries.len() > usize::from(u8::MAX) + 1 {
            return Err(Error::Manifest("class set exceeds 256 classes".into()));
        }
        let mut names = BTreeSet::new();
        for (idx, entry) in entries.iter().enumerate() {
            if usize::from(entry.id) != idx {
                return Err(Error::Manifest(format!(
                    "class ids must be consecutive from 0; position {idx} has id {}",
                    entry.id
                )));
            }
            if !names.insert(entry.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate class name `{}`", entry.name)));
            }
        }
        if entries[0].is_foreground {
            return Err(Error::Manifest("class 0 must be background".into()));
        }
        Ok(Self { entries })
    }

    /// Background plus glottis, epiglottis and uvula.
    pub fn oropharyngeal() -> Self {
        let entry = |id, name: &str, is_foreground| ClassEntry {
            id,
            name: name.to_string(),
            is_foreground,
        };
        Self {
            entries: vec![
                entry(0, "BG", false),
                entry(1, "GL", true),
                entry(2, "EP", true),
                entry(3, "UV", true),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn contains(&self, id: ClassId) -> bool {
        usize::from(id) < self.entries.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.entries.get(usize::from(id)).map(|e| e.name.as_str())
    }

    pub fn is_foreground(&self, id: ClassId) -> bool {
        self.entries
            .get(usize::from(id))
            .is_some_and(|e| e.is_foreground)
    }

    /// Foreground ids in ascending order.
    pub fn foreground_ids(&self) -> Vec<ClassId> {
        self.entries
            .iter()
            .filter(|e| e.is_foreground)
            .map(|e| e.id)
            .collect()
    }
}

impl Default for ClassSet {
    fn default() -> Self {
        Self::oropharyngeal()
    }
}

impl TryFrom<Vec<ClassEntry>> for ClassSet {
    type Error = Error;

    fn try_from(entries: Vec<ClassEntry>) -> Result<Self> {
        ClassSet::new(entries)
    }
}

impl From<ClassSet> for Vec<ClassEntry> {
    fn from(set: ClassSet) -> Self {
        set.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    SourceSim,
    TargetReal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One image/mask pair. Paths are resolved (not relative to any manifest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub domain: Domain,
    pub class_histogram: ClassHistogram,
}

impl SampleRecord {
    pub fn pixel_count(&self) -> u64 {
        self.class_histogram.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub domain: Domain,
    pub class_set: ClassSet,
    pub samples: Vec<SampleRecord>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn empty(name: impl Into<String>, domain: Domain, split: Split, class_set: ClassSet) -> Self {
        Self {
            name: name.into(),
            domain,
            class_set,
            samples: Vec::new(),
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.sample_id.as_str()).collect()
    }

    /// Checks id uniqueness and domain homogeneity without touching the filesystem.
    ///
    /// Real samples may appear inside a simulated training manifest (blended
    /// trainsets); every other mix of domains is rejected.
    pub fn check_structure(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for sample in &self.samples {
            if !seen.insert(sample.sample_id.as_str()) {
                return Err(Error::Validation {
                    sample_id: sample.sample_id.clone(),
                    reason: "duplicate sample_id".into(),
                });
            }
            let blended = self.domain == Domain::SourceSim
                && self.split == Split::Train
                && sample.domain == Domain::TargetReal;
            if sample.domain != self.domain && !blended {
                return Err(Error::Validation {
                    sample_id: sample.sample_id.clone(),
                    reason: format!(
                        "domain {:?} does not match manifest domain {:?}",
                        sample.domain, self.domain
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Fails when any sample id appears in more than one manifest.
pub fn check_disjoint(manifests: &[&DatasetManifest]) -> Result<()> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, manifest) in manifests.iter().enumerate() {
        for id in manifest.sample_ids() {
            if let Some(prev) = seen.insert(id, idx) {
                return Err(Error::Validation {
                    sample_id: id.to_string(),
                    reason: format!(
                        "appears in both `{}` and `{}`",
                        manifests[prev].name, manifest.name
                    ),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    name: String,
    domain: Domain,
    split: Split,
    class_set: ClassSet,
    samples: Vec<SampleDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleDoc {
    sample_id: String,
    image: PathBuf,
    mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_histogram: Option<ClassHistogram>,
}

/// Counts mask pixels per class. Fails on the first value outside the class set.
pub fn mask_histogram(mask: &image::GrayImage, class_set: &ClassSet) -> std::result::Result<ClassHistogram, u8> {
    let mut counts = vec![0u64; class_set.len()];
    for &v in mask.as_raw() {
        match counts.get_mut(usize::from(v)) {
            Some(c) => *c += 1,
            None => return Err(v),
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(id, c)| (id as ClassId, c))
        .collect())
}

/// Loads a manifest and verifies every referenced image and mask.
///
/// Histograms are always recomputed from the mask pixels; a cached histogram
/// that disagrees is a validation error.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let doc: ManifestDoc = util::read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            util::normalize_lexically(&base.join(p))
        }
    };

    let mut samples = Vec::with_capacity(doc.samples.len());
    for s in doc.samples {
        let image_path = resolve(&s.image);
        let mask_path = resolve(&s.mask);
        let (iw, ih) = image::image_dimensions(&image_path).map_err(|e| {
            if image_path.exists() {
                Error::load(&image_path, e)
            } else {
                Error::load(&image_path, "file not found")
            }
        })?;
        let mask = util::read_mask(&mask_path)?;
        if mask.dimensions() != (iw, ih) {
            return Err(Error::Validation {
                sample_id: s.sample_id,
                reason: format!(
                    "image is {iw}x{ih} but mask is {}x{}",
                    mask.width(),
                    mask.height()
                ),
            });
        }
        let histogram = mask_histogram(&mask, &doc.class_set).map_err(|v| Error::Validation {
            sample_id: s.sample_id.clone(),
            reason: format!("mask contains value {v}, not a class id"),
        })?;
        if let Some(cached) = &s.class_histogram {
            let normalized: ClassHistogram = histogram
                .iter()
                .map(|(&k, _)| (k, cached.get(&k).copied().unwrap_or(0)))
                .collect();
            let stray = cached.keys().any(|k| !doc.class_set.contains(*k));
            if stray || normalized != histogram {
                return Err(Error::Validation {
                    sample_id: s.sample_id,
                    reason: "cached class_histogram disagrees with mask pixels".into(),
                });
            }
        }
        samples.push(SampleRecord {
            sample_id: s.sample_id,
            image_path,
            mask_path,
            domain: s.domain.unwrap_or(doc.domain),
            class_histogram: histogram,
        });
    }

    let manifest = DatasetManifest {
        name: doc.name,
        domain: doc.domain,
        class_set: doc.class_set,
        samples,
        split: doc.split,
    };
    manifest.check_structure()?;
    Ok(manifest)
}

/// Writes a manifest with sample paths relative to the manifest's directory.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.check_structure()?;
    let base = path.parent().unwrap_or(Path::new(""));
    let abs_base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
    let relativize = |p: &Path| -> Result<PathBuf> {
        let abs = std::path::absolute(p).map_err(|e| Error::io(p, e))?;
        Ok(pathdiff::diff_paths(&abs, &abs_base).unwrap_or(abs))
    };
    let samples = manifest
        .samples
        .iter()
        .map(|s| {
            Ok(SampleDoc {
                sample_id: s.sample_id.clone(),
                image: relativize(&s.image_path)?,
                mask: relativize(&s.mask_path)?,
                domain: (s.domain != manifest.domain).then_some(s.domain),
                class_histogram: Some(s.class_histogram.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = ManifestDoc {
        name: manifest.name.clone(),
        domain: manifest.domain,
        split: manifest.split,
        class_set: manifest.class_set.clone(),
        samples,
    };
    util::write_json(path, &doc)
}

/// The foreground class with the most pixels, ties to the smaller id.
pub fn dominant_foreground_class(sample: &SampleRecord, class_set: &ClassSet) -> Option<ClassId> {
    let mut best: Option<(ClassId, u64)> = None;
    for (&id, &count) in &sample.class_histogram {
        if count == 0 || !class_set.is_foreground(id) {
            continue;
        }
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((id, count));
        }
    }
    best.map(|(id, _)| id)
}

fn check_fractions(fractions: &[f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Argument(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Shuffles `indices` and cuts them into three parts sized by largest remainder.
fn partition(mut indices: Vec<usize>, fractions: &[f64; 3], seed: u64, parts: &mut [Vec<usize>; 3]) {
    let sizes = util::apportion_fractions(indices.len(), fractions);
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut cursor = 0;
    for (part, size) in parts.iter_mut().zip(sizes) {
        part.extend_from_slice(&indices[cursor..cursor + size]);
        cursor += size;
    }
}

fn assemble(manifest: &DatasetManifest, parts: [Vec<usize>; 3]) -> [DatasetManifest; 3] {
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut out = splits.map(|split| DatasetManifest {
        samples: Vec::new(),
        split,
        ..manifest.clone()
    });
    for (dst, mut idx) in out.iter_mut().zip(parts) {
        // keep the original manifest order inside each part
        idx.sort_unstable();
        dst.samples = idx.into_iter().map(|i| manifest.samples[i].clone()).collect();
    }
    out
}

/// Seeded shuffle, then a largest-remainder partition into train/val/test.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[DatasetManifest; 3]> {
    check_fractions(&fractions)?;
    let mut parts: [Vec<usize>; 3] = Default::default();
    partition((0..manifest.len()).collect(), &fractions, seed, &mut parts);
    Ok(assemble(manifest, parts))
}

/// Like [`split_dataset`], but each dominant-foreground-class group is split
/// separately, so every part keeps the class mix of the whole.
pub fn split_dataset_stratified(
    manifest: &DatasetManifest,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[DatasetManifest; 3]> {
    check_fractions(&fractions)?;
    let mut groups: BTreeMap<Option<ClassId>, Vec<usize>> = BTreeMap::new();
    for (i, sample) in manifest.samples.iter().enumerate() {
        groups
            .entry(dominant_foreground_class(sample, &manifest.class_set))
            .or_default()
            .push(i);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, indices) in groups {
        let tag = class.map_or_else(|| "stratum-none".to_string(), |c| format!("stratum-{c}"));
        partition(indices, &fractions, util::derive_seed(seed, &tag), &mut parts);
    }
    Ok(assemble(manifest, parts))
}
