//! Dataset catalog, rotation balancing, train/validation split and batching.
//!
//! Expected on-disk layout:
//!
//! ```text
//! <root>/{train,test}/{Normal,COVID-19,Pneumonia}/*.{png,jpg,jpeg}
//! ```
//!
//! Manifests serialize as one `split<TAB>class_id<TAB>augmentation<TAB>path`
//! line per entry. Rotations are never written to disk; they are applied when
//! an image is loaded.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{self, FilterSpec, Raster, Turn};
use crate::seed;
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 3] = ["Normal", "COVID-19", "Pneumonia"];
pub const NUM_CLASSES: usize = 3;
/// Side length images are resized to before entering the network.
pub const IMAGE_SIZE: usize = 100;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Augmentation {
    None,
    Left90,
    Right90,
    Half,
}

impl Augmentation {
    pub fn name(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Left90 => "left90",
            Augmentation::Right90 => "right90",
            Augmentation::Half => "half",
        }
    }

    pub fn turn(self) -> Option<Turn> {
        match self {
            Augmentation::None => None,
            Augmentation::Left90 => Some(Turn::Left90),
            Augmentation::Right90 => Some(Turn::Right90),
            Augmentation::Half => Some(Turn::Half),
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Augmentation::None,
            Augmentation::Left90,
            Augmentation::Right90,
            Augmentation::Half,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown augmentation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub class_id: usize,
    pub augmentation: Augmentation,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    entries: Vec<Entry>,
}

impl Manifest {
    /// Validates class ids, `(path, augmentation)` uniqueness and split
    /// disjointness.
    pub fn new(entries: Vec<Entry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut train_paths = HashSet::new();
        let mut test_paths = HashSet::new();
        for e in &entries {
            if e.class_id >= NUM_CLASSES {
                return Err(Error::Dataset {
                    path: e.path.clone(),
                    reason: format!("class id {} out of range", e.class_id),
                });
            }
            if !seen.insert((&e.path, e.augmentation)) {
                return Err(Error::Dataset {
                    path: e.path.clone(),
                    reason: format!("duplicate entry with augmentation {}", e.augmentation.name()),
                });
            }
            match e.split {
                Split::Train => train_paths.insert(&e.path),
                Split::Test => test_paths.insert(&e.path),
            };
        }
        if let Some(p) = train_paths.intersection(&test_paths).next() {
            return Err(Error::Dataset {
                path: (*p).clone(),
                reason: "path appears in both train and test".into(),
            });
        }
        Ok(Manifest { entries })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> Vec<Entry> {
        self.entries.iter().filter(|e| e.split == split).cloned().collect()
    }

    /// Per-class entry counts for one split, indexed by class id.
    pub fn class_counts(&self, split: Split) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for e in self.entries.iter().filter(|e| e.split == split) {
            counts[e.class_id] += 1;
        }
        counts
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.split,
                e.class_id,
                e.augmentation.name(),
                e.path.display()
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Manifest { line: i + 1, reason };
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            let [split, class, aug, path] = fields[..] else {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            entries.push(Entry {
                split: split.parse().map_err(|e: Error| bad(e.to_string()))?,
                class_id: class.parse().map_err(|_| bad(format!("bad class id {class:?}")))?,
                augmentation: aug.parse().map_err(|e: Error| bad(e.to_string()))?,
                path: PathBuf::from(path),
            });
        }
        Manifest::new(entries)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Relative image paths are resolved against the manifest's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_text(&text)?;
        if let Some(dir) = path.parent() {
            for e in &mut m.entries {
                if e.path.is_relative() {
                    e.path = dir.join(&e.path);
                }
            }
        }
        Ok(m)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Catalogs `<root>/{train,test}/<class>/*` in lexicographic order.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let missing = |path: PathBuf, what: &str| Error::Dataset {
        path,
        reason: format!("missing {what} directory"),
    };
    let mut entries = Vec::new();
    for split in [Split::Train, Split::Test] {
        let split_dir = root.join(split.name());
        if !split_dir.is_dir() {
            return Err(missing(split_dir, "split"));
        }
        for (class_id, class) in CLASS_NAMES.iter().enumerate() {
            let dir = split_dir.join(class);
            if !dir.is_dir() {
                return Err(missing(dir, "class"));
            }
            let mut files = Vec::new();
            for item in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let p = item.map_err(|e| Error::io(&dir, e))?.path();
                if p.is_file() && is_image(&p) {
                    files.push(p);
                }
            }
            if files.is_empty() {
                return Err(Error::Dataset {
                    path: dir,
                    reason: "class directory contains no images".into(),
                });
            }
            files.sort();
            entries.extend(files.into_iter().map(|path| Entry {
                path,
                class_id,
                augmentation: Augmentation::None,
                split,
            }));
        }
    }
    Manifest::new(entries)
}

/// Rotations added per class; originals are always kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationPlan {
    pub per_class: [Vec<Augmentation>; NUM_CLASSES],
}

impl AugmentationPlan {
    /// Normal gains a half turn, COVID-19 all three rotations, Pneumonia nothing.
    pub fn paper() -> Self {
        AugmentationPlan {
            per_class: [
                vec![Augmentation::Half],
                vec![Augmentation::Left90, Augmentation::Right90, Augmentation::Half],
                vec![],
            ],
        }
    }

    pub fn empty() -> Self {
        AugmentationPlan {
            per_class: Default::default(),
        }
    }
}

/// Adds rotated copies per the plan, in both splits, right after each original.
pub fn balance(m: &Manifest, plan: &AugmentationPlan) -> Result<Manifest> {
    if let Some(e) = m.entries.iter().find(|e| e.augmentation != Augmentation::None) {
        return Err(Error::Dataset {
            path: e.path.clone(),
            reason: "manifest is already augmented".into(),
        });
    }
    let mut out = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        out.push(e.clone());
        for &aug in &plan.per_class[e.class_id] {
            if aug != Augmentation::None {
                out.push(Entry {
                    augmentation: aug,
                    ..e.clone()
                });
            }
        }
    }
    Manifest::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(validation_fraction: f64, seed: u64) -> Result<Self> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "validation fraction must be in (0,1), got {validation_fraction}"
            )));
        }
        Ok(SplitSpec {
            validation_fraction,
            seed,
        })
    }
}

/// Shuffles the train entries once and holds out the last
/// `ceil(fraction * n)` of them (at least one, at most `n - 1`).
pub fn split_train_val(m: &Manifest, spec: SplitSpec) -> Result<(Vec<Entry>, Vec<Entry>)> {
    SplitSpec::new(spec.validation_fraction, spec.seed)?;
    let mut train = m.split(Split::Train);
    let n = train.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 train entries to split, have {n}")));
    }
    train.shuffle(&mut seed::rng(spec.seed));
    let n_val = ((spec.validation_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let val = train.split_off(n - n_val);
    Ok((train, val))
}

/// Per-image preprocessing: rotate, then filter, then resize.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLoader {
    pub filter: Option<FilterSpec>,
    pub size: usize,
}

impl ImageLoader {
    pub fn new(filter: Option<FilterSpec>) -> Self {
        ImageLoader {
            filter,
            size: IMAGE_SIZE,
        }
    }

    pub fn prepare(&self, raster: &Raster, augmentation: Augmentation) -> Result<Raster> {
        let rotated;
        let mut img = raster;
        if let Some(turn) = augmentation.turn() {
            rotated = raster::rotate(raster, turn);
            img = &rotated;
        }
        let filtered;
        if let Some(f) = &self.filter {
            filtered = raster::apply_filter(img, f)?;
            img = &filtered;
        }
        raster::resize(img, self.size, self.size)
    }

    pub fn load(&self, entry: &Entry) -> Result<Raster> {
        let raw = raster::load_raster(&entry.path)?;
        self.prepare(&raw, entry.augmentation).map_err(|e| match e {
            Error::InvalidArgument(reason) => Error::Dataset {
                path: entry.path.clone(),
                reason,
            },
            other => other,
        })
    }
}

/// Preprocessed images held in memory as bytes, with their labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Raster>,
    labels: Vec<usize>,
}

/// A minibatch: `[B, H, W, 3]` images plus labels and source indices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Dataset {
    /// Loads and preprocesses every entry. Work is spread over the rayon
    /// pool; the result order always follows `entries`.
    pub fn load(entries: &[Entry], loader: &ImageLoader) -> Result<Self> {
        let images = entries
            .par_iter()
            .map(|e| loader.load(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            images,
            labels: entries.iter().map(|e| e.class_id).collect(),
        })
    }

    pub fn from_rasters(images: Vec<Raster>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid("image and label counts differ"));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|r| r.width() != first.width() || r.height() != first.height()) {
                return Err(Error::invalid("all images in a dataset must share one size"));
            }
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[Raster] {
        &self.images
    }

    /// Assembles the given indices into one normalized batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let first = &self.images[indices[0]];
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(indices.len() * w * h * 3);
        for &i in indices {
            data.extend(self.images[i].pixels().iter().map(|&b| f32::from(b) / 255.0));
        }
        Batch {
            images: Tensor::from_vec([indices.len(), h, w, 3], data).expect("non-empty batch"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// Shuffled minibatch order for one epoch; the same `epoch_seed` always
    /// yields the same order.
    pub fn batches(&self, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seed::rng(epoch_seed));
        self.batches_in_order(order, batch_size)
    }

    /// Minibatches in storage order, for evaluation passes.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Batches<'_>> {
        self.batches_in_order((0..self.len()).collect(), batch_size)
    }

    fn batches_in_order(&self, order: Vec<usize>, batch_size: usize) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(Batches {
            data: self,
            order,
            batch_size,
            pos: 0,
        })
    }
}

/// Seed for the training-order shuffle of one epoch.
pub fn epoch_seed(shuffle_seed: u64, epoch: usize) -> u64 {
    seed::derive_indexed(shuffle_seed, epoch as u64)
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::FilterKind;

    fn entry(path: &str, class_id: usize, split: Split) -> Entry {
        Entry {
            path: PathBuf::from(path),
            class_id,
            augmentation: Augmentation::None,
            split,
        }
    }

    fn write_tree(root: &Path, counts: [[usize; 3]; 2]) {
        for (s, split) in ["train", "test"].iter().enumerate() {
            for (c, class) in CLASS_NAMES.iter().enumerate() {
                let dir = root.join(split).join(class);
                fs::create_dir_all(&dir).unwrap();
                for i in 0..counts[s][c] {
                    let shade = (40 * c + i) as u8;
                    Raster::filled(4, 4, [shade; 3])
                        .unwrap()
                        .save_png(dir.join(format!("img{i:02}.png")))
                        .unwrap();
                }
            }
        }
    }

    #[test]
    fn scan_assigns_fixed_class_ids() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), [[2, 1, 3], [1, 1, 1]]);
        fs::write(dir.path().join("train/Normal/notes.txt"), "x").unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        let ids: Vec<usize> = m.split(Split::Train).iter().map(|e| e.class_id).collect();
        assert_eq!(ids, vec![0, 0, 1, 2, 2, 2]);
        assert_eq!(m.class_counts(Split::Test), [1, 1, 1]);
        assert_eq!(scan_dataset(dir.path()).unwrap(), m);
    }

    #[test]
    fn scan_reports_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), [[1, 1, 1], [1, 1, 1]]);
        fs::remove_dir_all(dir.path().join("test/COVID-19")).unwrap();
        let err = scan_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("COVID-19"), "{err}");

        let empty = tempfile::tempdir().unwrap();
        write_tree(empty.path(), [[1, 0, 1], [1, 1, 1]]);
        assert!(scan_dataset(empty.path()).unwrap_err().to_string().contains("no images"));
        assert!(scan_dataset(empty.path().join("nope")).is_err());
    }

    #[test]
    fn manifest_invariants() {
        let dup = vec![entry("a", 0, Split::Train), entry("a", 0, Split::Train)];
        assert!(Manifest::new(dup).is_err());
        let cross = vec![entry("a", 0, Split::Train), entry("a", 0, Split::Test)];
        assert!(Manifest::new(cross).is_err());
        assert!(Manifest::new(vec![entry("a", 3, Split::Train)]).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = balance(
            &Manifest::new(vec![
                entry("x/a b.png", 0, Split::Train),
                entry("x/c.png", 1, Split::Test),
            ])
            .unwrap(),
            &AugmentationPlan::paper(),
        )
        .unwrap();
        let text = m.to_text();
        assert!(text.starts_with("train\t0\tnone\tx/a b.png\n"));
        assert_eq!(Manifest::from_text(&text).unwrap(), m);
        assert!(Manifest::from_text("train\t0\tnone").is_err());
        assert!(Manifest::from_text("valid\t0\tnone\tp").is_err());
    }

    #[test]
    fn balance_plan_arithmetic() {
        let mut es = Vec::new();
        for (c, n) in [5usize, 2, 7].into_iter().enumerate() {
            for i in 0..n {
                es.push(entry(&format!("tr{c}_{i}"), c, Split::Train));
                es.push(entry(&format!("te{c}_{i}"), c, Split::Test));
            }
        }
        let m = Manifest::new(es).unwrap();
        let b = balance(&m, &AugmentationPlan::paper()).unwrap();
        for split in [Split::Train, Split::Test] {
            assert_eq!(b.class_counts(split), [10, 8, 7]);
        }
        assert_eq!(balance(&m, &AugmentationPlan::empty()).unwrap(), m);
        assert!(balance(&b, &AugmentationPlan::paper()).is_err());

        let normals = Manifest::new((0..3).map(|i| entry(&format!("n{i}"), 0, Split::Train)).collect()).unwrap();
        let nb = balance(&normals, &AugmentationPlan::paper()).unwrap();
        let added: Vec<_> = nb.entries().iter().filter(|e| e.augmentation == Augmentation::Half).collect();
        assert_eq!(added.len(), 3);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = Manifest::new((0..10).map(|i| entry(&format!("e{i}"), i % 3, Split::Train)).collect()).unwrap();
        let spec = SplitSpec::new(0.3, 9).unwrap();
        let (tr, va) = split_train_val(&m, spec).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        let mut all: Vec<_> = tr.iter().chain(&va).map(|e| e.path.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
        assert_eq!(split_train_val(&m, spec).unwrap(), (tr, va));

        let m20 = Manifest::new((0..20).map(|i| entry(&format!("e{i}"), 0, Split::Train)).collect()).unwrap();
        assert_eq!(split_train_val(&m20, spec).unwrap().1.len(), 6);

        let one = Manifest::new(vec![entry("a", 0, Split::Train)]).unwrap();
        assert!(split_train_val(&one, spec).is_err());
        assert!(SplitSpec::new(1.0, 0).is_err());
        assert!(SplitSpec::new(0.0, 0).is_err());
    }

    fn tiny_dataset(n: usize) -> Dataset {
        let images = (0..n).map(|i| Raster::filled(3, 3, [i as u8; 3]).unwrap()).collect();
        Dataset::from_rasters(images, (0..n).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn batch_sizes_and_coverage() {
        let d = tiny_dataset(7);
        let sizes: Vec<usize> = d.batches(3, 1).unwrap().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![3, 3, 1]);
        let mut seen: Vec<usize> = d.batches(3, 1).unwrap().flat_map(|b| b.indices).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        let mut labels: Vec<usize> = d.batches(3, 5).unwrap().flat_map(|b| b.labels).collect();
        labels.sort();
        let mut want = d.labels().to_vec();
        want.sort();
        assert_eq!(labels, want);
        assert!(d.batches(0, 1).is_err());
    }

    #[test]
    fn epoch_orders_are_seeded() {
        let d = tiny_dataset(20);
        let order = |e| d.batches(4, epoch_seed(11, e)).unwrap().order().to_vec();
        assert_eq!(order(0), order(0));
        assert_ne!(order(0), order(1));
    }

    #[test]
    fn batch_tensor_layout() {
        let d = tiny_dataset(4);
        let b = d.batch(&[2, 0]);
        assert_eq!(b.images.shape(), &[2, 3, 3, 3]);
        assert_eq!(b.images.data()[0], 2.0 / 255.0);
        assert_eq!(b.labels, vec![2, 0]);
    }

    #[test]
    fn loader_rotates_before_filtering() {
        let dir = tempfile::tempdir().unwrap();
        let src = Raster::from_fn(12, 9, |x, y| [(x * 20) as u8, (y * 25) as u8, ((x * y) % 256) as u8]).unwrap();
        let path = dir.path().join("a.png");
        src.save_png(&path).unwrap();
        let e = Entry {
            augmentation: Augmentation::Half,
            ..entry(path.to_str().unwrap(), 0, Split::Train)
        };
        let plain = ImageLoader { filter: None, size: 12 };
        // square target so the resize is a pure rescale of the rotated image
        let rotated = raster::rotate(&src, Turn::Half);
        assert_eq!(plain.load(&e).unwrap(), raster::resize(&rotated, 12, 12).unwrap());

        let sharp = ImageLoader::new(Some(FilterKind::Sharpen.spec()));
        let want = raster::resize(&raster::apply_filter(&rotated, &FilterKind::Sharpen.spec()).unwrap(), 100, 100).unwrap();
        assert_eq!(sharp.load(&e).unwrap(), want);

        // without rotation or filter the order of the remaining steps cannot matter
        let none = Entry { augmentation: Augmentation::None, ..e.clone() };
        let via_loader = raster::to_tensor(&ImageLoader::new(None).load(&none).unwrap());
        assert_eq!(via_loader, raster::to_tensor(&raster::resize(&src, 100, 100).unwrap()));

        let missing = Entry { path: dir.path().join("gone.png"), ..e };
        let err = ImageLoader::new(None).load(&missing).unwrap_err();
        assert!(err.to_string().contains("gone.png"));
    }
}
