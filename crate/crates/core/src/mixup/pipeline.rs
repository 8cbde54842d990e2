use std::collections::BTreeMap;
use std::path::PathBuf;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confusion::GuidedPairs;
use crate::error::{Error, Result};
use crate::types::{Category, Dataset, ImageGroups, ImageId, ImageRecord, Instance};

use super::{
    apply_geometric, apply_photometric, blend, plan_blend, sample_rng, select_partner,
    transform_annotations, AugmentConfig, BlendPlan, CategoryIndex,
};

/// Where pixel data comes from.
pub trait ImageSource: Sync {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage>;
}

/// Reads `root/<file_name>` from disk.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    pub root: PathBuf,
}

impl ImageSource for DirectorySource {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage> {
        let path = self.root.join(&record.file_name);
        let img = image::open(&path).map_err(|source| Error::Image { path, source })?;
        Ok(img.to_rgb8())
    }
}

/// In-memory images keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    pub images: BTreeMap<ImageId, RgbImage>,
}

impl ImageSource for MemorySource {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage> {
        self.images
            .get(&record.id)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("no pixels for image {}", record.id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: RgbImage,
    /// Kept instances of the first image, then of the second.
    pub annotations: Vec<Instance>,
    pub sources: (ImageId, ImageId),
    pub plan: BlendPlan,
    pub kept: (usize, usize),
}

/// Applies a fixed plan: geometry on both sides, blend, merge annotations,
/// photometrics on the output.
pub fn augment_with_plan(
    a: (&RgbImage, &[Instance]),
    b: (&RgbImage, &[Instance]),
    plan: &BlendPlan,
    config: &AugmentConfig,
) -> Result<(RgbImage, Vec<Instance>, (usize, usize))> {
    let target = plan.target();
    let a_img = apply_geometric(a.0, &plan.a, target)?;
    let b_img = apply_geometric(b.0, &plan.b, target)?;
    let mut image = blend(&a_img, &b_img, config.gamma)?;
    apply_photometric(&mut image, &plan.photometric);

    let kept_a = transform_annotations(a.1, &plan.a, target, config.min_visible_fraction);
    let kept_b = transform_annotations(b.1, &plan.b, target, config.min_visible_fraction);
    let kept = (kept_a.len(), kept_b.len());
    let annotations = kept_a
        .into_iter()
        .chain(kept_b)
        .enumerate()
        .map(|(i, inst)| Instance {
            id: i as u64 + 1,
            ..inst
        })
        .collect();
    Ok((image, annotations, kept))
}

/// Samples a plan from `rng` and mixes image `a` (weight gamma) with `b`.
pub fn augment_sample<R: Rng>(
    a: (ImageId, &RgbImage, &[Instance]),
    b: (ImageId, &RgbImage, &[Instance]),
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedSample> {
    let dims = |img: &RgbImage| (img.height(), img.width());
    let plan = plan_blend(dims(a.1), dims(b.1), config, rng);
    let (image, annotations, kept) = augment_with_plan((a.1, a.2), (b.1, b.2), &plan, config)?;
    Ok(AugmentedSample {
        image,
        annotations,
        sources: (a.0, b.0),
        plan,
        kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOutcome {
    Original,
    Augmented,
    Error,
}

/// One manifest line per training image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub image_id: ImageId,
    pub bernoulli_draw: bool,
    pub partner: Option<ImageId>,
    pub outcome: SampleOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    /// RNG stream; equals `index`.
    pub stream: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<BlendPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kept: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedSample {
    pub index: u64,
    pub outcome: SampleOutcome,
    pub sources: Vec<ImageId>,
    pub image: RgbImage,
    pub annotations: Vec<Instance>,
}

impl EmittedSample {
    pub fn output_image_id(&self) -> ImageId {
        self.index + 1
    }

    pub fn output_file_name(&self) -> String {
        format!("{:06}.png", self.output_image_id())
    }
}

/// Collects emitted samples into an output dataset with fresh ids.
#[derive(Debug, Clone, Default)]
pub struct OutputDataset {
    dataset: Dataset,
}

impl OutputDataset {
    pub fn new(categories: Vec<Category>) -> Self {
        Self {
            dataset: Dataset {
                categories,
                ..Dataset::default()
            },
        }
    }

    pub fn push(&mut self, sample: &EmittedSample) {
        let image_id = sample.output_image_id();
        self.dataset.images.push(ImageRecord {
            id: image_id,
            width: sample.image.width(),
            height: sample.image.height(),
            file_name: sample.output_file_name(),
        });
        let first = self.dataset.annotations.len() as u64 + 1;
        self.dataset
            .annotations
            .extend(
                sample
                    .annotations
                    .iter()
                    .enumerate()
                    .map(|(i, a)| Instance {
                        id: first + i as u64,
                        image_id,
                        score: None,
                        ..a.clone()
                    }),
            );
    }

    pub fn finish(self) -> Dataset {
        self.dataset
    }
}

/// Builds the output dataset from a set of samples.
pub fn assemble_dataset<'a>(
    categories: Vec<Category>,
    samples: impl IntoIterator<Item = &'a EmittedSample>,
) -> Dataset {
    let mut out = OutputDataset::new(categories);
    for s in samples {
        out.push(s);
    }
    out.finish()
}

enum Rendered {
    Original(RgbImage),
    Augmented(AugmentedSample),
}

/// Lazily produces one sample per training image, in image id order.
pub struct AugmentStream<'a, S: ImageSource> {
    dataset: &'a Dataset,
    gt: ImageGroups,
    index: CategoryIndex,
    source: &'a S,
    pairs: &'a GuidedPairs,
    config: &'a AugmentConfig,
    next: usize,
}

/// Bernoulli-gated guided mixup over a whole dataset.
///
/// Each training image draws from Bernoulli(`bernoulli_p`); on success, and
/// when a confused partner exists, a mixed sample replaces it, otherwise the
/// original is emitted. Every sample uses its own RNG stream, so any sample
/// can be reproduced alone via [`AugmentStream::sample`].
pub fn augment_dataset<'a, S: ImageSource>(
    dataset: &'a Dataset,
    source: &'a S,
    pairs: &'a GuidedPairs,
    config: &'a AugmentConfig,
) -> Result<AugmentStream<'a, S>> {
    config.validate()?;
    Ok(AugmentStream {
        dataset,
        gt: dataset.gt_by_image(),
        index: CategoryIndex::build(dataset),
        source,
        pairs,
        config,
        next: 0,
    })
}

impl<S: ImageSource> AugmentStream<'_, S> {
    pub fn len(&self) -> usize {
        self.dataset.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.images.is_empty()
    }

    fn load_checked(&self, record: &ImageRecord) -> Result<RgbImage> {
        let img = self.source.load(record)?;
        if (img.height(), img.width()) != (record.height, record.width) {
            return Err(Error::ImageDims {
                expected: (record.height, record.width),
                actual: (img.height(), img.width()),
            });
        }
        Ok(img)
    }

    /// Produces sample `index` independently of every other sample.
    pub fn sample(&self, index: usize) -> (ManifestEntry, Option<EmittedSample>) {
        let record = &self.dataset.images[index];
        let seed = self.config.seed;
        let mut rng = sample_rng(seed, index as u64);
        let draw = rng.random_bool(self.config.bernoulli_p);
        let partner = if draw {
            select_partner(record.id, &self.index, self.pairs, &mut rng)
        } else {
            None
        };
        let mut entry = ManifestEntry {
            index: index as u64,
            image_id: record.id,
            bernoulli_draw: draw,
            partner,
            outcome: SampleOutcome::Original,
            error: None,
            seed,
            stream: index as u64,
            plan: None,
            kept: None,
        };
        match self.render(record, partner, &mut rng) {
            Ok(rendered) => {
                let emitted = match rendered {
                    Rendered::Augmented(aug) => {
                        entry.outcome = SampleOutcome::Augmented;
                        entry.plan = Some(aug.plan.clone());
                        entry.kept = Some(aug.kept);
                        EmittedSample {
                            index: index as u64,
                            outcome: SampleOutcome::Augmented,
                            sources: vec![aug.sources.0, aug.sources.1],
                            image: aug.image,
                            annotations: aug.annotations,
                        }
                    }
                    Rendered::Original(original) => EmittedSample {
                        index: index as u64,
                        outcome: SampleOutcome::Original,
                        sources: vec![record.id],
                        image: original,
                        annotations: self.gt[&record.id].clone(),
                    },
                };
                (entry, Some(emitted))
            }
            Err(e) => {
                log::warn!("sample {index} (image {}): {e}", record.id);
                entry.outcome = SampleOutcome::Error;
                entry.error = Some(e.to_string());
                (entry, None)
            }
        }
    }

    fn render<R: Rng>(
        &self,
        record: &ImageRecord,
        partner: Option<ImageId>,
        rng: &mut R,
    ) -> Result<Rendered> {
        let a = self.load_checked(record)?;
        let Some(pid) = partner else {
            return Ok(Rendered::Original(a));
        };
        let partner_record = self
            .dataset
            .image(pid)
            .ok_or_else(|| Error::Invalid(format!("partner image {pid} not in dataset")))?;
        let b = self.load_checked(partner_record)?;
        let sample = augment_sample(
            (record.id, &a, &self.gt[&record.id]),
            (pid, &b, &self.gt[&pid]),
            self.config,
            rng,
        )?;
        Ok(Rendered::Augmented(sample))
    }
}

impl<S: ImageSource> Iterator for AugmentStream<'_, S> {
    type Item = (ManifestEntry, Option<EmittedSample>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.dataset.images.len() {
            return None;
        }
        let item = self.sample(self.next);
        self.next += 1;
        Some(item)
    }
}
