//! Plain-data images, label maps, samples and visibility masks.

use remic_nn::{Scalar, Tensor};

use crate::error::{input, Result};

/// Single-channel image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(input(format!(
                "image {height}x{width} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, pixels: vec![value; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// As a `(1, 1, H, W)` tensor mapped from `[0, 1]` to the network range `[-1, 1]`.
    pub fn to_network<T: Scalar>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&p| T::from_f64c(2.0 * p as f64 - 1.0)).collect();
        Tensor::image(self.height, self.width, data).expect("image dims are positive")
    }

    /// Inverse of [`Image::to_network`] for one plane of a tensor.
    pub fn from_network<T: Scalar>(t: &Tensor<T>, batch: usize, channel: usize) -> Self {
        let pixels = t.channel(batch, channel).iter().map(|&v| ((v.to_f64c() + 1.0) * 0.5) as f32).collect();
        Self { height: t.height(), width: t.width(), pixels }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// Integer class map with labels in `0..num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(input(format!(
                "label map {height}x{width} cannot hold {} labels",
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    /// One-hot `(1, L, H, W)` encoding.
    pub fn one_hot<T: Scalar>(&self, num_classes: usize) -> Result<Tensor<T>> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(input(format!("label {bad} outside 0..{num_classes}")));
        }
        let plane = self.height * self.width;
        let mut t = Tensor::zeros([1, num_classes, self.height, self.width]);
        for (p, &l) in self.labels.iter().enumerate() {
            t.data_mut()[l as usize * plane + p] = T::one();
        }
        Ok(t)
    }
}

/// Which domains of a sample are observed. At least one flag is always set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VisibilityMask {
    flags: Vec<bool>,
}

impl VisibilityMask {
    pub fn new(flags: Vec<bool>) -> Result<Self> {
        if !flags.iter().any(|&f| f) {
            return Err(input("visibility mask hides every domain"));
        }
        Ok(Self { flags })
    }

    pub fn all(n: usize) -> Self {
        assert!(n > 0);
        Self { flags: vec![true; n] }
    }

    /// Every domain except `missing`.
    pub fn single_missing(n: usize, missing: usize) -> Result<Self> {
        if missing >= n {
            return Err(input(format!("domain {missing} out of range for {n} domains")));
        }
        Self::new((0..n).map(|i| i != missing).collect())
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_visible(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i)
    }

    pub fn missing(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, &f)| !f).map(|(i, _)| i)
    }

    pub fn count_visible(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Parses `"1,0,1"` style flags.
    pub fn parse(s: &str) -> Result<Self> {
        let flags = s
            .split(',')
            .map(|t| match t.trim() {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                other => Err(input(format!("bad visibility flag `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(flags)
    }
}

impl std::fmt::Display for VisibilityMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<&str> = self.flags.iter().map(|&v| if v { "1" } else { "0" }).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// One subject: `N` co-registered domain images, an optional label map and visibility flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub images: Vec<Image>,
    pub seg_mask: Option<LabelMap>,
    pub visibility: VisibilityMask,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        images: Vec<Image>,
        seg_mask: Option<LabelMap>,
        visibility: VisibilityMask,
    ) -> Result<Self> {
        let s = Self { id: id.into(), images, seg_mask, visibility };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.images.first().ok_or_else(|| input(format!("sample {} has no images", self.id)))?;
        if self.visibility.len() != self.images.len() {
            return Err(input(format!(
                "sample {}: {} visibility flags for {} domains",
                self.id,
                self.visibility.len(),
                self.images.len()
            )));
        }
        for (i, im) in self.images.iter().enumerate() {
            if (im.height, im.width) != (first.height, first.width) {
                return Err(input(format!("sample {}: domain {i} size differs", self.id)));
            }
        }
        if let Some(m) = &self.seg_mask {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(input(format!("sample {}: mask size differs", self.id)));
            }
        }
        Ok(())
    }

    pub fn num_domains(&self) -> usize {
        self.images.len()
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn with_visibility(&self, visibility: VisibilityMask) -> Result<Self> {
        let mut s = self.clone();
        s.visibility = visibility;
        s.validate()?;
        Ok(s)
    }

    /// Images with hidden domains replaced by all-zero images.
    pub fn zero_filled(&self) -> Vec<Image> {
        self.images
            .iter()
            .enumerate()
            .map(|(i, im)| {
                if self.visibility.is_visible(i) {
                    im.clone()
                } else {
                    Image::zeros(im.height, im.width)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_requires_a_visible_domain() {
        assert!(VisibilityMask::new(vec![false, false]).is_err());
        let m = VisibilityMask::single_missing(4, 2).unwrap();
        assert_eq!(m.flags(), &[true, true, false, true]);
        assert_eq!(m.to_string(), "1,1,0,1");
        assert_eq!(VisibilityMask::parse("1,1,0,1").unwrap(), m);
    }

    #[test]
    fn zero_fill_only_touches_hidden_domains() {
        let ims = vec![Image::filled(2, 2, 0.3), Image::filled(2, 2, 0.7)];
        let s = Sample::new("s", ims, None, VisibilityMask::new(vec![true, false]).unwrap()).unwrap();
        let z = s.zero_filled();
        assert_eq!(z[0], Image::filled(2, 2, 0.3));
        assert_eq!(z[1], Image::zeros(2, 2));
    }

    #[test]
    fn network_range_round_trip() {
        let im = Image::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let t = im.to_network::<f32>();
        assert_eq!(t.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(Image::from_network(&t, 0, 0), im);
    }
}
