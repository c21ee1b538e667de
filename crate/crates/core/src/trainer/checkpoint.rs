//! Binary checkpoints: `"REMICKPT"`, format version, config echo, iteration, RNG state,
//! named parameters, per-group Adam moments, then a SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remic_nn::Tensor;
use sha2::{Digest, Sha256};

use super::adam::{AdamState, GroupState, Optimizer};
use super::{TrainConfig, Trainer};
use crate::config::ModelConfig;
use crate::error::{io_err, RemicError, Result};
use crate::model::Remic;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"REMICKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_echo: String,
    pub iteration: u64,
    pub rng: RngState,
    pub params: Vec<(String, Tensor<f32>)>,
    pub groups: Vec<(String, AdamState<f32>)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor<f32>) {
        t.shape().iter().for_each(|&d| self.u32(d as u32));
        t.data().iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> RemicError {
        RemicError::Corrupt { path: self.path.to_path_buf(), reason: reason.into() }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("invalid utf-8 string"))
    }
    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = self.u32()? as usize;
        }
        let n: usize = shape.iter().product();
        if n == 0 || n > (self.buf.len() - self.pos) / 4 {
            return Err(self.corrupt(format!("bad tensor shape {shape:?}")));
        }
        let data = self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::from_vec(shape, data).map_err(|e| self.corrupt(e.to_string()))
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&ck.config_echo);
    w.u64(ck.iteration);
    w.0.extend_from_slice(&ck.rng.seed);
    w.u64(ck.rng.stream);
    w.0.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    w.u32(ck.params.len() as u32);
    for (name, t) in &ck.params {
        w.str(name);
        w.tensor(t);
    }
    w.u32(ck.groups.len() as u32);
    for (name, st) in &ck.groups {
        w.str(name);
        w.u64(st.step);
        w.u32(st.m.len() as u32);
        st.m.iter().chain(&st.v).for_each(|t| w.tensor(t));
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(r.corrupt("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RemicError::Version { found: version, expected: VERSION });
    }
    if bytes.len() < 8 + 4 + 32 {
        return Err(r.corrupt("truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(r.corrupt("checksum mismatch (truncated or modified file)"));
    }
    r.buf = body;
    let config_echo = r.str()?;
    let iteration = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let np = r.u32()? as usize;
    let mut params = Vec::with_capacity(np.min(1 << 16));
    for _ in 0..np {
        params.push((r.str()?, r.tensor()?));
    }
    let ng = r.u32()? as usize;
    let mut groups = Vec::with_capacity(ng.min(1 << 16));
    for _ in 0..ng {
        let name = r.str()?;
        let step = r.u64()?;
        let k = r.u32()? as usize;
        let m = (0..k).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let v = (0..k).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        groups.push((name, AdamState { step, m, v }));
    }
    if r.pos != body.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    Ok(Checkpoint { config_echo, iteration, rng: RngState { seed, stream, word_pos }, params, groups })
}

impl Checkpoint {
    pub fn capture(t: &Trainer) -> Self {
        Self {
            config_echo: t.model.config().echo(),
            iteration: t.iteration,
            rng: RngState::capture(&t.rng),
            params: t.model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            groups: t.optimizer.groups.iter().map(|g| (g.name.clone(), g.state.clone())).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        decode(&bytes, path)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_echo(&self.config_echo)
    }

    fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let want = expected.echo();
        if self.config_echo != want {
            return Err(RemicError::ConfigMismatch(format!("checkpoint has `{}`, expected `{want}`", self.config_echo)));
        }
        Ok(())
    }

    fn param_store(&self, template: &ParamStore<f32>) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            store.add(name.clone(), t.clone());
        }
        let mismatch = store.len() != template.len()
            || store.iter().zip(template.iter()).any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape());
        if mismatch {
            return Err(RemicError::ConfigMismatch("parameter names or shapes differ from the model".into()));
        }
        Ok(store)
    }

    /// Inference model built from the stored configuration.
    pub fn into_model(self) -> Result<Remic<f32>> {
        let cfg = self.model_config()?;
        let template = Remic::<f32>::new(cfg.clone())?;
        let store = self.param_store(template.params())?;
        Remic::with_params(cfg, store)
    }
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, encode(&Checkpoint::capture(trainer))).map_err(io_err(path))
}

/// Restores a trainer; the model configuration must match the checkpoint exactly.
pub fn load_checkpoint(path: &Path, model_config: &ModelConfig, train_config: TrainConfig) -> Result<Trainer> {
    let ck = Checkpoint::read(path)?;
    ck.check_config(model_config)?;
    let model = Remic::<f32>::new(model_config.clone())?;
    let store = ck.param_store(model.params())?;
    let model = Remic::with_params(model_config.clone(), store)?;
    let mut trainer = Trainer::new(model, train_config)?;
    let mut groups = Vec::with_capacity(ck.groups.len());
    for ((name, state), fresh) in ck.groups.into_iter().zip(&trainer.optimizer.groups) {
        let same = name == fresh.name
            && state.m.len() == fresh.ids.len()
            && state.m.iter().zip(&fresh.state.m).all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(RemicError::ConfigMismatch(format!("optimizer group `{name}` does not match the model")));
        }
        groups.push(GroupState { name, ids: fresh.ids.clone(), state });
    }
    if groups.len() != trainer.optimizer.groups.len() {
        return Err(RemicError::ConfigMismatch("optimizer group count differs".into()));
    }
    trainer.optimizer = Optimizer { adam: trainer.optimizer.adam, groups };
    trainer.rng = ck.rng.restore();
    trainer.iteration = ck.iteration;
    Ok(trainer)
}

pub fn load_model(path: &Path) -> Result<Remic<f32>> {
    Checkpoint::read(path)?.into_model()
}
