//! Binary checkpoints.
//!
//! Layout: magic `JTVE`, `u32` LE format version, then sections, each a
//! `u32` LE name length, the UTF-8 name, a `u64` LE payload length and the
//! payload. Integers are little-endian; reals are little-endian `f64` bits.
//! Sections, in order: `config` (JSON), `state` (data dim, step, batch
//! stream position), `rng`, `layers` (every linear layer with its
//! spectral-norm state), `adam.alpha`, `adam.theta`, `adam.phi`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::models::TriModel;
use crate::nn::{AdamConfig, AdamState, LinearLayer, SpectralState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"JTVE";
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 7] = ["config", "state", "rng", "layers", "adam.alpha", "adam.theta", "adam.phi"];

/// Position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Full training state: parameters, optimizer moments, spectral-norm
/// vectors, RNG position, batch position, step counter and config.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub model: TriModel,
    pub adam_alpha: AdamState,
    pub adam_theta: AdamState,
    pub adam_phi: AdamState,
    pub rng: RngState,
    pub batch_epoch: u64,
    pub batch_cursor: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
    fn section(&mut self, name: &str, payload: Writer) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

fn encode_adam(s: &AdamState) -> Writer {
    let mut w = Writer(Vec::new());
    let AdamConfig { lr, beta1, beta2, eps } = s.config;
    for v in [lr, beta1, beta2, eps] {
        w.f64(v);
    }
    w.u64(s.t);
    w.u32(s.m.len() as u32);
    for (m, v) in s.m.iter().zip(&s.v) {
        w.tensor(m);
        w.tensor(v);
    }
    w
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Writer(MAGIC.to_vec());
        out.u32(FORMAT_VERSION);

        out.section("config", Writer(self.config.to_json().into_bytes()));

        let mut st = Writer(Vec::new());
        st.u64(self.model.data_dim() as u64);
        st.u64(self.step);
        st.u64(self.batch_epoch);
        st.u64(self.batch_cursor as u64);
        out.section("state", st);

        let mut r = Writer(self.rng.seed.to_vec());
        r.u64(self.rng.stream);
        r.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.section("rng", r);

        let layers = self.model.layers();
        let mut l = Writer(Vec::new());
        l.u32(layers.len() as u32);
        for layer in layers {
            l.tensor(&layer.weight);
            l.tensor(&layer.bias);
            match &layer.spectral {
                None => l.0.push(0),
                Some(s) => {
                    l.0.push(1);
                    l.tensor(&s.u);
                    l.tensor(&s.v);
                    l.f64(s.sigma);
                }
            }
        }
        out.section("layers", l);

        out.section("adam.alpha", encode_adam(&self.adam_alpha));
        out.section("adam.theta", encode_adam(&self.adam_theta));
        out.section("adam.phi", encode_adam(&self.adam_phi));
        out.0
    }

    /// Parses a checkpoint and rebuilds the model it describes. Nothing is
    /// returned unless every section parses and matches the architecture.
    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::parse(0, "bad magic, expected \"JTVE\""));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
        }
        let mut payloads = Vec::with_capacity(SECTIONS.len());
        for expected in SECTIONS {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = r.take(len)?;
            if name != expected.as_bytes() {
                return Err(Error::parse(
                    at,
                    format!("expected section {expected:?}, found {:?}", String::from_utf8_lossy(name)),
                ));
            }
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| Error::parse(r.pos - 8, "section length overflows"))?;
            let start = r.pos;
            r.take(len)?;
            payloads.push(Reader { bytes: &bytes[..start + len], pos: start });
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(r.pos, "trailing bytes after last section"));
        }
        let [mut cfg, mut st, mut rng, mut layers, mut a, mut t, mut p]: [Reader; 7] =
            payloads.try_into().unwrap_or_else(|_| unreachable!("seven sections"));

        let cfg_at = cfg.pos;
        let text = std::str::from_utf8(cfg.rest()).map_err(|e| Error::parse(cfg_at + e.valid_up_to(), "config is not UTF-8"))?;
        let config = TrainConfig::from_json(text).map_err(|e| Error::parse(cfg_at, format!("config: {e}")))?;

        let data_dim = st.usize()?;
        let step = st.u64()?;
        let batch_epoch = st.u64()?;
        let batch_cursor = st.usize()?;
        st.end()?;

        let mut seed = [0u8; 32];
        seed.copy_from_slice(rng.take(32)?);
        let stream = rng.u64()?;
        let word_pos = u128::from_le_bytes(rng.take(16)?.try_into().expect("16 bytes"));
        rng.end()?;

        // Architecture comes from the config; the RNG here only fills values
        // that are overwritten below.
        let mut model = TriModel::new(&config.model, data_dim, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| Error::parse(st.pos, format!("cannot rebuild model: {e}")))?;
        let count_at = layers.pos;
        let count = layers.u32()? as usize;
        let mut targets = model.layers_mut();
        if count != targets.len() {
            return Err(Error::parse(
                count_at,
                format!("checkpoint has {count} layers, config describes {}", targets.len()),
            ));
        }
        for target in targets.iter_mut() {
            read_layer(&mut layers, target)?;
        }
        layers.end()?;

        let adam_alpha = read_adam(&mut a, &model_shapes(&model, Group::Alpha))?;
        let adam_theta = read_adam(&mut t, &model_shapes(&model, Group::Theta))?;
        let adam_phi = read_adam(&mut p, &model_shapes(&model, Group::Phi))?;

        Ok(Checkpoint {
            config,
            step,
            model,
            adam_alpha,
            adam_theta,
            adam_phi,
            rng: RngState { seed, stream, word_pos },
            batch_epoch,
            batch_cursor,
        })
    }

    /// Writes to a temporary sibling and renames, so an interrupted save
    /// never replaces a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_all()
        };
        write().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }
}

#[derive(Clone, Copy)]
enum Group {
    Alpha,
    Theta,
    Phi,
}

fn model_shapes(model: &TriModel, group: Group) -> Vec<Vec<usize>> {
    use crate::nn::ParamGroup;
    let params = match group {
        Group::Alpha => model.energy.params(),
        Group::Theta => model.generator.params(),
        Group::Phi => model.inference.params(),
    };
    params.into_iter().map(|p| p.shape().to_vec()).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(self.bytes.len(), format!("truncated: needed {n} bytes at offset {}", self.pos))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64()?).map_err(|_| Error::parse(at, "value exceeds usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }
    fn end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(self.pos, "unexpected bytes at end of section"));
        }
        Ok(())
    }
    fn tensor(&mut self, expected: &[usize]) -> Result<Tensor> {
        let at = self.pos;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.usize()?);
        }
        if shape != expected {
            return Err(Error::parse(at, format!("tensor shape {shape:?}, expected {expected:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::parse(at, "tensor size overflows"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(&shape, data)
    }
}

fn read_layer(r: &mut Reader<'_>, layer: &mut LinearLayer) -> Result<()> {
    layer.weight = r.tensor(layer.weight.shape())?;
    layer.bias = r.tensor(layer.bias.shape())?;
    let at = r.pos;
    layer.spectral = match r.take(1)?[0] {
        0 => None,
        1 => {
            let u = r.tensor(&[layer.weight.rows()])?;
            let v = r.tensor(&[layer.weight.cols()])?;
            let sigma = r.f64()?;
            Some(SpectralState { u, v, sigma })
        }
        b => return Err(Error::parse(at, format!("bad spectral flag {b}"))),
    };
    Ok(())
}

fn read_adam(r: &mut Reader<'_>, shapes: &[Vec<usize>]) -> Result<AdamState> {
    let lr = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let t = r.u64()?;
    let at = r.pos;
    let n = r.u32()? as usize;
    if n != shapes.len() {
        return Err(Error::parse(at, format!("optimizer tracks {n} tensors, model has {}", shapes.len())));
    }
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for shape in shapes {
        m.push(r.tensor(shape)?);
        v.push(r.tensor(shape)?);
    }
    r.end()?;
    Ok(AdamState { config: AdamConfig { lr, beta1, beta2, eps }, m, v, t })
}
