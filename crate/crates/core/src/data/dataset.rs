//! On-disk dataset layout: `<root>/{train,test}/<sample_id>/domain_<i>.rmt`, an optional
//! `mask.rmt` per sample, and a key-value `manifest.txt` at the root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::rmt::{self, RmtData, RmtTensor};
use super::synth::{generate_dataset, SynthConfig};
use crate::error::{input, io_err, RemicError, Result};
use crate::image::{Image, LabelMap, Sample, VisibilityMask};

pub const MANIFEST: &str = "manifest.txt";
pub const SPLITS: [&str; 2] = ["train", "test"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetInfo {
    pub num_domains: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub seed: Option<u64>,
    pub num_train: usize,
    pub num_test: usize,
    pub has_masks: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    /// Wraps in-memory samples, checking they agree on geometry.
    pub fn from_samples(train: Vec<Sample>, test: Vec<Sample>, num_classes: usize, seed: Option<u64>) -> Result<Self> {
        let first = train.first().or(test.first()).ok_or_else(|| input("dataset has no samples"))?;
        let (n, h, w) = (first.num_domains(), first.height(), first.width());
        let has_masks = first.seg_mask.is_some();
        for s in train.iter().chain(&test) {
            s.validate()?;
            if (s.num_domains(), s.height(), s.width()) != (n, h, w) {
                return Err(input(format!("sample {} disagrees with the dataset geometry", s.id)));
            }
            if s.seg_mask.is_some() != has_masks {
                return Err(input(format!("sample {}: masks must be present for all samples or none", s.id)));
            }
            if let Some(m) = &s.seg_mask {
                if let Some(&bad) = m.labels.iter().find(|&&l| l as usize >= num_classes.max(1)) {
                    return Err(input(format!("sample {}: label {bad} outside 0..{num_classes}", s.id)));
                }
            }
        }
        let info = DatasetInfo {
            num_domains: n,
            height: h,
            width: w,
            num_classes,
            seed,
            num_train: train.len(),
            num_test: test.len(),
            has_masks,
        };
        Ok(Self { info, train, test })
    }

    pub fn synthetic(cfg: &SynthConfig) -> Result<Self> {
        let (train, test) = generate_dataset(cfg)?;
        Self::from_samples(train, test, cfg.num_classes, Some(cfg.seed))
    }

    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(input(format!("unknown split `{other}`"))),
        }
    }
}

fn image_tensor(im: &Image) -> RmtTensor {
    RmtTensor { dims: vec![im.height, im.width], data: RmtData::F32(im.pixels.clone()) }
}

fn mask_tensor(m: &LabelMap) -> RmtTensor {
    RmtTensor { dims: vec![m.height, m.width], data: RmtData::I32(m.labels.iter().map(|&l| l as i32).collect()) }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> RemicError {
    RemicError::Corrupt { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes the dataset; the manifest records a digest of every payload file.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let mut entries = Vec::new();
    for split in SPLITS {
        let split_dir = dir.join(split);
        fs::create_dir_all(&split_dir).map_err(io_err(&split_dir))?;
        for s in ds.split(split)? {
            let sdir = split_dir.join(&s.id);
            fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
            let mut files = Vec::new();
            for (i, im) in s.images.iter().enumerate() {
                files.push((format!("domain_{i}.rmt"), rmt::encode(&image_tensor(im))));
            }
            if let Some(m) = &s.seg_mask {
                files.push(("mask.rmt".to_string(), rmt::encode(&mask_tensor(m))));
            }
            for (name, bytes) in files {
                let p = sdir.join(&name);
                fs::write(&p, &bytes).map_err(io_err(&p))?;
                entries.push((format!("{split}/{}/{name}", s.id), bytes));
            }
        }
    }
    let digest = content_digest(entries);
    let info = &ds.info;
    let seed = info.seed.map_or("none".to_string(), |s| s.to_string());
    let manifest = format!(
        "format=remic-dataset\nversion=1\nnum_domains={}\nheight={}\nwidth={}\nnum_classes={}\nseed={seed}\n\
         num_train={}\nnum_test={}\nhas_masks={}\ncontent_sha256={digest}\n",
        info.num_domains, info.height, info.width, info.num_classes, info.num_train, info.num_test, info.has_masks
    );
    let p = dir.join(MANIFEST);
    fs::write(&p, manifest).map_err(io_err(&p))
}

/// SHA-256 over `(relative path, bytes)` pairs taken in path order.
fn content_digest(mut entries: Vec<(String, Vec<u8>)>) -> String {
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut hasher = Sha256::new();
    for (name, bytes) in &entries {
        hasher.update(name.as_bytes());
        hasher.update(b"\n");
        hasher.update(bytes);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_manifest(path: &Path) -> Result<(DatasetInfo, String)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let kv: BTreeMap<&str, &str> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| corrupt(path, format!("bad line `{l}`"))))
        .collect::<Result<_>>()?;
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| corrupt(path, format!("missing key `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| corrupt(path, format!("bad value for `{k}`"))) };
    let seed = match get("seed")? {
        "none" => None,
        s => Some(s.parse().map_err(|_| corrupt(path, "bad value for `seed`"))?),
    };
    if get("format")? != "remic-dataset" {
        return Err(corrupt(path, "not a dataset manifest"));
    }
    let version: u32 = get("version")?.parse().map_err(|_| corrupt(path, "bad value for `version`"))?;
    if version != 1 {
        return Err(RemicError::Version { found: version, expected: 1 });
    }
    let info = DatasetInfo {
        num_domains: num("num_domains")?,
        height: num("height")?,
        width: num("width")?,
        num_classes: num("num_classes")?,
        seed,
        num_train: num("num_train")?,
        num_test: num("num_test")?,
        has_masks: get("has_masks")? == "true",
    };
    Ok((info, get("content_sha256")?.to_string()))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetInfo> {
    Ok(parse_manifest(&dir.join(MANIFEST))?.0)
}

fn sample_dirs(split_dir: &Path) -> Result<Vec<PathBuf>> {
    if !split_dir.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(split_dir)
        .map_err(io_err(split_dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(split_dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn load_image(path: &Path, bytes: &[u8], info: &DatasetInfo) -> Result<Image> {
    let t = rmt::decode(bytes, path)?;
    match t.data {
        RmtData::F32(px) if t.dims == [info.height, info.width] => Ok(Image { height: info.height, width: info.width, pixels: px }),
        RmtData::F32(_) => Err(corrupt(path, format!("dims {:?}, manifest says {}x{}", t.dims, info.height, info.width))),
        RmtData::I32(_) => Err(corrupt(path, "image file holds integer data")),
    }
}

fn load_mask(path: &Path, bytes: &[u8], info: &DatasetInfo) -> Result<LabelMap> {
    let t = rmt::decode(bytes, path)?;
    match t.data {
        RmtData::I32(v) if t.dims == [info.height, info.width] => {
            let labels = v
                .into_iter()
                .map(|l| {
                    if l < 0 || l as usize >= info.num_classes.max(1) {
                        Err(corrupt(path, format!("label {l} outside 0..{}", info.num_classes)))
                    } else {
                        Ok(l as u32)
                    }
                })
                .collect::<Result<_>>()?;
            Ok(LabelMap { height: info.height, width: info.width, labels })
        }
        RmtData::I32(_) => Err(corrupt(path, format!("dims {:?}, manifest says {}x{}", t.dims, info.height, info.width))),
        RmtData::F32(_) => Err(corrupt(path, "mask file holds float data")),
    }
}

/// Loads a sample directory; also returns each file's name and raw bytes.
fn load_sample_files(sdir: &Path, info: &DatasetInfo) -> Result<(Sample, Vec<(String, Vec<u8>)>)> {
    let id = sdir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let mut files = Vec::new();
    let mut images = Vec::with_capacity(info.num_domains);
    for i in 0..info.num_domains {
        let name = format!("domain_{i}.rmt");
        let p = sdir.join(&name);
        if !p.exists() {
            return Err(corrupt(&p, "missing domain file"));
        }
        let bytes = read_bytes(&p)?;
        images.push(load_image(&p, &bytes, info)?);
        files.push((name, bytes));
    }
    let mp = sdir.join("mask.rmt");
    let seg_mask = if mp.exists() {
        let bytes = read_bytes(&mp)?;
        let m = load_mask(&mp, &bytes, info)?;
        files.push(("mask.rmt".into(), bytes));
        Some(m)
    } else {
        None
    };
    if info.has_masks && seg_mask.is_none() {
        return Err(corrupt(&mp, "manifest declares masks but the file is missing"));
    }
    Ok((Sample::new(id, images, seg_mask, VisibilityMask::all(info.num_domains))?, files))
}

/// Loads one sample directory in dataset layout.
pub fn load_sample(sdir: &Path, info: &DatasetInfo) -> Result<Sample> {
    Ok(load_sample_files(sdir, info)?.0)
}

fn load_split(dir: &Path, split: &str, info: &DatasetInfo, entries: &mut Vec<(String, Vec<u8>)>) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for d in sample_dirs(&dir.join(split))? {
        let (s, files) = load_sample_files(&d, info)?;
        entries.extend(files.into_iter().map(|(name, b)| (format!("{split}/{}/{name}", s.id), b)));
        out.push(s);
    }
    Ok(out)
}

/// Loads and verifies a dataset against its manifest, including the content digest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST);
    let (info, digest) = parse_manifest(&manifest)?;
    let mut entries = Vec::new();
    let train = load_split(dir, "train", &info, &mut entries)?;
    let test = load_split(dir, "test", &info, &mut entries)?;
    if train.len() != info.num_train || test.len() != info.num_test {
        return Err(corrupt(
            &manifest,
            format!(
                "manifest lists {}/{} samples, found {}/{}",
                info.num_train,
                info.num_test,
                train.len(),
                test.len()
            ),
        ));
    }
    if content_digest(entries) != digest {
        return Err(corrupt(&manifest, "content digest does not match the sample files"));
    }
    Ok(Dataset { info, train, test })
}

fn read_png_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| corrupt(path, e.to_string()))?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Converts `<src>/{train,test}/<id>/domain_<i>.png` (8-bit grayscale, optional `mask.png`
/// holding class indices as gray levels) into a dataset.
pub fn import_png(src: &Path, num_classes: usize) -> Result<Dataset> {
    let mut splits: Vec<Vec<Sample>> = Vec::new();
    for split in SPLITS {
        let mut samples = Vec::new();
        for sdir in sample_dirs(&src.join(split))? {
            let id = sdir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let mut images = Vec::new();
            while sdir.join(format!("domain_{}.png", images.len())).exists() {
                let p = sdir.join(format!("domain_{}.png", images.len()));
                let (h, w, px) = read_png_gray(&p)?;
                images.push(Image::new(h, w, px.iter().map(|&v| v as f32 / 255.0).collect())?);
            }
            if images.is_empty() {
                return Err(corrupt(&sdir, "no domain_0.png"));
            }
            let mp = sdir.join("mask.png");
            let seg_mask = if mp.exists() {
                let (h, w, px) = read_png_gray(&mp)?;
                Some(LabelMap::new(h, w, px.iter().map(|&v| v as u32).collect())?)
            } else {
                None
            };
            let n = images.len();
            samples.push(Sample::new(id, images, seg_mask, VisibilityMask::all(n))?);
        }
        splits.push(samples);
    }
    let test = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Dataset::from_samples(train, test, num_classes, None)
}
