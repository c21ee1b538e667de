//! Ways to fill in missing domains: fixed baselines and the trained model.

use crate::error::{input, Result};
use crate::image::{Image, Sample, VisibilityMask};
use crate::model::{argmax_labels, Remic, StylePolicy};

/// Produces all `N` images of a sample; visible domains are returned unchanged.
pub trait Completer {
    fn name(&self) -> String;
    fn complete(&self, sample: &Sample) -> Result<Vec<Image>>;
}

/// Predicts a label map from a full set of (possibly imputed) domain images.
pub trait Segmenter {
    fn segment(&self, completed: &[Image], original: &VisibilityMask) -> Result<Vec<u32>>;
    fn num_classes(&self) -> usize;
}

fn completed(sample: &Sample, images: Vec<Image>) -> Sample {
    Sample {
        id: sample.id.clone(),
        images,
        seg_mask: sample.seg_mask.clone(),
        visibility: VisibilityMask::all(sample.num_domains()),
    }
}

fn fill(sample: &Sample, mut missing: impl FnMut(usize) -> Result<Image>) -> Result<Vec<Image>> {
    sample
        .images
        .iter()
        .enumerate()
        .map(|(i, im)| if sample.visibility.is_visible(i) { Ok(im.clone()) } else { missing(i) })
        .collect()
}

pub fn impute_zero(sample: &Sample) -> Sample {
    completed(sample, sample.zero_filled())
}

/// Missing domains become the pixelwise mean of the visible ones.
pub fn impute_average(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let visible: Vec<&Image> = sample.visibility.visible().map(|i| &sample.images[i]).collect();
    let k = visible.len() as f64;
    let mean: Vec<f32> = (0..h * w)
        .map(|p| (visible.iter().map(|im| im.pixels[p] as f64).sum::<f64>() / k) as f32)
        .collect();
    let avg = Image { height: h, width: w, pixels: mean };
    completed(sample, fill(sample, |_| Ok(avg.clone())).expect("infallible"))
}

fn l2(a: &Image, b: &Image) -> f64 {
    a.pixels.iter().zip(&b.pixels).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Index of the training sample closest to `sample`, summing Euclidean distances over the
/// sample's visible domains, and that distance. Ties keep the earliest sample.
pub fn nearest_neighbor(sample: &Sample, train: &[Sample]) -> Result<(usize, f64)> {
    if train.is_empty() {
        return Err(input("nearest-neighbor imputation needs a non-empty training set"));
    }
    let mut best = (0, f64::INFINITY);
    for (j, t) in train.iter().enumerate() {
        if t.num_domains() != sample.num_domains() || (t.height(), t.width()) != (sample.height(), sample.width()) {
            return Err(input(format!("training sample {} does not match the query geometry", t.id)));
        }
        let d: f64 = sample.visibility.visible().map(|i| l2(&sample.images[i], &t.images[i])).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best)
}

pub fn impute_nn(sample: &Sample, train: &[Sample]) -> Result<Sample> {
    let (j, _) = nearest_neighbor(sample, train)?;
    let images = fill(sample, |i| Ok(train[j].images[i].clone()))?;
    Ok(completed(sample, images))
}

pub struct ZeroImputer;

impl Completer for ZeroImputer {
    fn name(&self) -> String {
        "Zero".into()
    }
    fn complete(&self, sample: &Sample) -> Result<Vec<Image>> {
        Ok(impute_zero(sample).images)
    }
}

pub struct AverageImputer;

impl Completer for AverageImputer {
    fn name(&self) -> String {
        "Average".into()
    }
    fn complete(&self, sample: &Sample) -> Result<Vec<Image>> {
        Ok(impute_average(sample).images)
    }
}

pub struct NearestNeighborImputer<'a> {
    pub train: &'a [Sample],
}

impl Completer for NearestNeighborImputer<'_> {
    fn name(&self) -> String {
        "NN".into()
    }
    fn complete(&self, sample: &Sample) -> Result<Vec<Image>> {
        Ok(impute_nn(sample, self.train)?.images)
    }
}

/// Model completion: generated images replace missing domains only.
pub struct ModelCompleter<'a> {
    pub model: &'a Remic<f32>,
    pub policy: StylePolicy,
    pub label: String,
}

impl<'a> ModelCompleter<'a> {
    pub fn new(model: &'a Remic<f32>) -> Self {
        Self { model, policy: StylePolicy::default(), label: "ReMIC".into() }
    }
}

impl Completer for ModelCompleter<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn complete(&self, sample: &Sample) -> Result<Vec<Image>> {
        let generated = self.model.complete_missing(sample, self.policy)?;
        fill(sample, |i| Ok(generated[i].clone()))
    }
}

/// Returns the ground truth for every domain; a perfect completer for checking protocols.
pub struct Oracle;

impl Completer for Oracle {
    fn name(&self) -> String {
        "Oracle".into()
    }
    fn complete(&self, sample: &Sample) -> Result<Vec<Image>> {
        Ok(sample.images.clone())
    }
}

/// The model's segmentation head applied to completed images.
pub struct ModelSegmenter<'a> {
    pub model: &'a Remic<f32>,
}

impl Segmenter for ModelSegmenter<'_> {
    fn segment(&self, completed: &[Image], original: &VisibilityMask) -> Result<Vec<u32>> {
        let vis = match self.model.config().seg_input {
            crate::config::SegInput::Completed => VisibilityMask::all(completed.len()),
            crate::config::SegInput::ZeroFilled => original.clone(),
        };
        Ok(argmax_labels(&self.model.segment_images(completed, &vis)?))
    }
    fn num_classes(&self) -> usize {
        self.model.config().num_classes.max(2)
    }
}
