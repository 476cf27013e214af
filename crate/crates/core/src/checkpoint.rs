//! Binary checkpoint: encoder (and optionally head) parameters with the
//! configuration and vocabulary they were trained with.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SCSECKPT" | u32 version | str dtype | str config | str vocab hash | str vocab
//! u32 count | count x (str name | u32 rank | rank x u32 dim | values)
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Values are written in the
//! element type named by `dtype` (4 bytes for f32, 8 for f64), in parameter
//! declaration order with `encoder.` / `head.` name prefixes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::data::Vocab;
use crate::encoder::{EncoderConfig, EncoderParams, Pooling};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadKind, HeadParams};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

pub const MAGIC: &[u8; 8] = b"SCSECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub vocab: Vocab,
    pub encoder: EncoderParams<T>,
    pub head: Option<HeadParams<T>>,
    pub train: TrainConfig,
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

fn encoder_text(c: &EncoderConfig) -> String {
    format!(
        "vocab_size={}\nd_model={}\nn_layers={}\nn_heads={}\nd_ff={}\nmax_length={}\ndropout_p={}\npooling={}\n",
        c.vocab_size,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ff,
        c.max_length,
        c.dropout_p,
        c.pooling.name()
    )
}

fn head_text(c: &HeadConfig) -> String {
    format!(
        "kind={}\ndense_in={}\ndense_out={}\ndropout_p={}\n",
        c.kind.name(),
        c.dense_in,
        c.dense_out,
        c.dropout_p
    )
}

/// Canonical configuration text embedded in a checkpoint.
pub fn config_text<T: Scalar>(ckpt: &Checkpoint<T>) -> String {
    let mut s = format!("[encoder]\n{}", encoder_text(&ckpt.encoder.config));
    if let Some(h) = &ckpt.head {
        s += &format!("[head]\n{}", head_text(&h.config));
    }
    s += &format!("[train]\n{}", ckpt.train.to_text());
    s
}

struct Sections<'a> {
    encoder: Vec<(&'a str, &'a str)>,
    head: Option<Vec<(&'a str, &'a str)>>,
    train: String,
}

fn parse_sections(text: &str) -> Result<Sections<'_>> {
    let mut encoder = Vec::new();
    let mut head: Option<Vec<(&str, &str)>> = None;
    let mut train = String::new();
    let mut section = "";
    for line in text.lines() {
        if line.starts_with('[') {
            section = line;
            if line == "[head]" {
                head = Some(Vec::new());
            }
            continue;
        }
        if section == "[train]" {
            train.push_str(line);
            train.push('\n');
            continue;
        }
        let kv = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
        match section {
            "[encoder]" => encoder.push(kv),
            "[head]" => head.as_mut().expect("head section").push(kv),
            _ => return Err(Error::Checkpoint(format!("config line outside a section: `{line}`"))),
        }
    }
    Ok(Sections { encoder, head, train })
}

fn field<'a>(kv: &[(&str, &'a str)], key: &str) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Checkpoint(format!("config is missing `{key}`")))
}

fn num<N: std::str::FromStr>(kv: &[(&str, &str)], key: &str) -> Result<N> {
    let v = field(kv, key)?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{key}`")))
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_store<T: Scalar>(out: &mut Vec<u8>, prefix: &str, store: &ParamStore<T>) {
    for (_, name, t) in store.iter() {
        write_str(out, &format!("{prefix}{name}"));
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn read_store<T: Scalar>(&mut self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let want = format!("{prefix}{}", store.name(id));
            let name = self.str()?;
            if name != want {
                return Err(Error::Checkpoint(format!("expected parameter `{want}`, found `{name}`")));
            }
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let t = store.get_mut(id);
            if shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{want}` has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            let raw = self.take(t.len() * T::BYTES)?;
            for (v, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(T::BYTES)) {
                *v = T::read_le(chunk);
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_str(&mut out, T::DTYPE);
        write_str(&mut out, &config_text(self));
        write_str(&mut out, &self.vocab.content_hash());
        write_str(&mut out, &self.vocab.to_text());
        let count = self.encoder.store.len() + self.head.as_ref().map_or(0, |h| h.store.len());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        write_store(&mut out, "encoder.", &self.encoder.store);
        if let Some(h) = &self.head {
            write_store(&mut out, "head.", &h.store);
        }
        out
    }

    /// Parses a checkpoint. With `expected_vocab_hash`, the embedded
    /// vocabulary must carry that hash.
    pub fn from_bytes(bytes: &[u8], expected_vocab_hash: Option<&str>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dtype = r.str()?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("checkpoint holds {dtype}, expected {}", T::DTYPE)));
        }
        let config = r.str()?;
        let stored_hash = r.str()?;
        let vocab = Vocab::from_text(r.str()?)?;
        if vocab.content_hash() != stored_hash {
            return Err(Error::Checkpoint("embedded vocabulary does not match its hash".into()));
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != stored_hash {
                return Err(Error::VocabHashMismatch {
                    expected: expected.to_string(),
                    found: stored_hash.to_string(),
                });
            }
        }
        let sections = parse_sections(config)?;
        let e = &sections.encoder;
        let enc_config = EncoderConfig {
            vocab_size: num(e, "vocab_size")?,
            d_model: num(e, "d_model")?,
            n_layers: num(e, "n_layers")?,
            n_heads: num(e, "n_heads")?,
            d_ff: num(e, "d_ff")?,
            max_length: num(e, "max_length")?,
            dropout_p: num(e, "dropout_p")?,
            pooling: Pooling::parse(field(e, "pooling")?)?,
        };
        let train = TrainConfig::from_text(TrainConfig::finetune(), &sections.train)?;
        let mut encoder = EncoderParams::init(enc_config, 0)?;
        let mut head = match &sections.head {
            Some(h) => Some(HeadParams::init(
                HeadConfig {
                    kind: HeadKind::parse(field(h, "kind")?)?,
                    dense_in: num(h, "dense_in")?,
                    dense_out: num(h, "dense_out")?,
                    dropout_p: num(h, "dropout_p")?,
                },
                0,
            )?),
            None => None,
        };
        let count = r.u32()? as usize;
        let want = encoder.store.len() + head.as_ref().map_or(0, |h| h.store.len());
        if count != want {
            return Err(Error::Checkpoint(format!("{count} parameters stored, expected {want}")));
        }
        r.read_store("encoder.", &mut encoder.store)?;
        if let Some(h) = &mut head {
            r.read_store("head.", &mut h.store)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            vocab,
            encoder,
            head,
            train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, expected_vocab_hash: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_vocab_hash)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.to_bytes())
    }
}
