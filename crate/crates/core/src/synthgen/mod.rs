//! Synthetic confounded datasets.
//!
//! Scenes are rendered from a parametric prior; within every split an exact
//! number of positives (`round(p/100 * n_positives)`) receive the configured
//! artefact. Negatives are never altered.

mod confounder;
mod io;
mod scene;

pub use confounder::{inject_confounder, ConfounderKind};
pub use io::{load_dataset, save_dataset, MANIFEST_FILE, MANIFEST_HEADER};
pub use scene::{render_scene, SceneParams, ScenePrior, MAX_RATIO, MIN_RATIO, RATIO_THRESHOLD};

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ConfounderMask, ImageGrid};
use crate::rng::{stream, SeedPart};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub clean_image: ImageGrid,
    pub image: ImageGrid,
    pub label: u8,
    pub mask: Option<ConfounderMask>,
    pub confounded: bool,
}

impl Example {
    pub fn clean(image: ImageGrid, label: u8) -> Self {
        Self {
            clean_image: image.clone(),
            image,
            label,
            mask: None,
            confounded: false,
        }
    }

    /// The untouched counterpart of this example.
    pub fn to_clean(&self) -> Example {
        Example::clean(self.clean_image.clone(), self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    /// Percentage of positives carrying the confounder, 0..=100.
    pub p: u32,
    pub confounder: ConfounderKind,
    pub seed: u64,
    pub prior: ScenePrior,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 1200,
            n_val: 150,
            n_test: 150,
            image_size: 64,
            p: 0,
            confounder: ConfounderKind::tag(),
            seed: 0,
            prior: ScenePrior::default(),
        }
    }
}

impl DatasetSpec {
    /// Sizes in 80/10/10 proportion for a total sample count.
    pub fn with_total(total: usize) -> Self {
        let n_val = total / 10;
        let n_test = total / 10;
        Self {
            n_train: total - n_val - n_test,
            n_val,
            n_test,
            ..Self::default()
        }
    }

    pub fn size_of(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Param("split sizes must be positive".into()));
        }
        if self.p > 100 {
            return Err(Error::Param(format!("contamination p={} outside 0..=100", self.p)));
        }
        if self.image_size < 8 {
            return Err(Error::Param(format!("image size {} too small", self.image_size)));
        }
        self.confounder.validate(self.image_size, self.image_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Same scenes as `test` with no confounders.
    pub clean_test: Vec<Example>,
}

impl SplitDataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Pixel-wise mean of the training images.
    pub fn train_mean(&self) -> Result<ImageGrid> {
        ImageGrid::mean(self.train.iter().map(|e| &e.image))
    }
}

/// Number of positives that receive the confounder.
pub fn contaminated_count(p: u32, n_positives: usize) -> usize {
    (f64::from(p) * n_positives as f64 / 100.0).round() as usize
}

fn build_split(spec: &DatasetSpec, split: Split) -> Result<Vec<Example>> {
    let size = spec.image_size;
    let n = spec.size_of(split);
    let mut examples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, &["scene".into(), split.name().into(), i.into()]);
            let params = spec.prior.sample(size, &mut rng);
            let (image, label) = render_scene(&params, size, &mut rng)?;
            Ok(Example::clean(image, label))
        })
        .collect::<Result<Vec<_>>>()?;

    let positives: Vec<usize> = (0..n).filter(|&i| examples[i].label == 1).collect();
    if spec.p > 0 && positives.is_empty() {
        return Err(Error::Dataset(format!(
            "{} split has no positives to contaminate at p={}",
            split.name(),
            spec.p
        )));
    }
    let k = contaminated_count(spec.p, positives.len());
    let mut select = stream(spec.seed, &["select".into(), split.name().into()]);
    let mut chosen: Vec<usize> = sample(&mut select, positives.len(), k)
        .into_iter()
        .map(|j| positives[j])
        .collect();
    chosen.sort_unstable();

    let injected = chosen
        .par_iter()
        .map(|&i| {
            let mut rng = stream(spec.seed, &["confounder".into(), split.name().into(), i.into()]);
            inject_confounder(&examples[i].clean_image, &spec.confounder, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, (image, mask)) in chosen.into_iter().zip(injected) {
        let ex = &mut examples[i];
        ex.image = image;
        ex.mask = Some(mask);
        ex.confounded = true;
    }
    Ok(examples)
}

/// Generates all three splits plus the clean copy of the test split.
/// Deterministic in `spec` regardless of thread scheduling.
pub fn build_dataset(spec: &DatasetSpec) -> Result<SplitDataset> {
    spec.validate()?;
    let train = build_split(spec, Split::Train)?;
    let val = build_split(spec, Split::Val)?;
    let test = build_split(spec, Split::Test)?;
    let clean_test = test.iter().map(Example::to_clean).collect();
    Ok(SplitDataset {
        train,
        val,
        test,
        clean_test,
    })
}

/// A test positive seen with and without its confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    /// Index into the test split.
    pub index: usize,
    pub clean: ImageGrid,
    pub confounded: ImageGrid,
    pub mask: ConfounderMask,
}

/// Pairs every positive test example with a confounded version. Examples
/// that already carry the confounder reuse it; clean positives receive one
/// on demand from a stream keyed by `(seed, index)`.
pub fn confounded_pairs(test: &[Example], kind: &ConfounderKind, seed: u64) -> Result<Vec<EvalPair>> {
    test.iter()
        .enumerate()
        .filter(|(_, e)| e.label == 1)
        .map(|(index, e)| {
            let (confounded, mask) = match (&e.mask, e.confounded) {
                (Some(mask), true) => (e.image.clone(), mask.clone()),
                _ => {
                    let path: [SeedPart<'_>; 2] = ["on-demand".into(), index.into()];
                    inject_confounder(&e.clean_image, kind, &mut stream(seed, &path))?
                }
            };
            Ok(EvalPair {
                index,
                clean: e.clean_image.clone(),
                confounded,
                mask,
            })
        })
        .collect()
}
