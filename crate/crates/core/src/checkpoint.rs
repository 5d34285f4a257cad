//! Versioned binary checkpoint of a trained appearance model.
//!
//! Layout: magic `VGCK`, u32 version, then tagged sections `CONF` (JSON),
//! `HASH`, `MLPD`, `MLPS`, `MLPG`, `VANL` (little-endian f32 parameter blobs)
//! and `OPTS` (optimizer step count and moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceModel;
use crate::codec::{hex, sha256, Reader, Writer};
use crate::error::{Error, Result};
use crate::math::f32_round;
use crate::nn::Params;
use crate::optim::AdamState;
use crate::training::TrainConfig;

const MAGIC: &[u8; 4] = b"VGCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ConfigEcho {
    config: TrainConfig,
    step: usize,
    rng_seed: u64,
    scene_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AppearanceModel,
    pub config: TrainConfig,
    pub step: usize,
    pub adam: AdamState,
    /// Geometry hash of the scene the model was trained on.
    pub scene_hash: [u8; 32],
}

fn round_all<P: Params>(p: &mut P) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = f32_round(*v));
    }
}

impl Checkpoint {
    /// Snapshot with every value rounded to f32, so a save/load round trip is exact.
    pub fn from_model(model: &AppearanceModel, config: &TrainConfig, step: usize, adam: &AdamState, scene_hash: [u8; 32]) -> Self {
        let mut model = model.clone();
        round_all(&mut model);
        let mut adam = adam.clone();
        for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            t.iter_mut().for_each(|v| *v = f32_round(*v));
        }
        Self {
            model,
            config: config.clone(),
            step,
            adam,
            scene_hash,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        let echo = ConfigEcho {
            config: self.config.clone(),
            step: self.step,
            rng_seed: self.config.rng_seed,
            scene_hash: hex(&self.scene_hash),
        };
        let json = serde_json::to_vec(&echo).map_err(|e| Error::Format(e.to_string()))?;
        w.section(b"CONF", &json);
        let blob = |p: &dyn Fn(&mut Writer)| {
            let mut s = Writer::new();
            p(&mut s);
            s.into_inner()
        };
        w.section(b"HASH", &blob(&|s| s.f32s(&self.model.grid.tables)));
        w.section(b"MLPD", &blob(&|s| s.f32s(&self.model.diffuse.flatten())));
        w.section(b"MLPS", &blob(&|s| s.f32s(&self.model.specular.flatten())));
        w.section(b"MLPG", &blob(&|s| s.f32s(&self.model.seg.flatten())));
        w.section(b"VANL", &blob(&|s| s.f32s(&self.model.vanilla.flatten())));
        w.section(
            b"OPTS",
            &blob(&|s| {
                s.u64(self.adam.t);
                s.u32(self.adam.m.len() as u32);
                for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
                    s.u64(m.len() as u64);
                    s.f32s(m);
                    s.f32s(v);
                }
            }),
        );
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut sections = std::collections::HashMap::new();
        while !r.is_empty() {
            let (tag, payload) = r.section()?;
            sections.insert(tag, payload);
        }
        let get = |tag: &[u8; 4]| {
            sections
                .get(tag)
                .copied()
                .ok_or_else(|| Error::Format(format!("checkpoint lacks section {}", String::from_utf8_lossy(tag))))
        };
        let echo: ConfigEcho = serde_json::from_slice(get(b"CONF")?).map_err(|e| Error::Format(e.to_string()))?;
        let mut model = AppearanceModel::new(echo.config.model.clone(), echo.config.rng_seed)?;
        let floats = |tag: &[u8; 4]| -> Result<Vec<f64>> {
            let p = get(tag)?;
            if p.len() % 4 != 0 {
                return Err(Error::Format("parameter blob is not a whole number of f32 values".into()));
            }
            Reader::new(p).f32s(p.len() / 4)
        };
        let tables = floats(b"HASH")?;
        if tables.len() != model.grid.tables.len() {
            return Err(Error::Format("hash table blob has the wrong size".into()));
        }
        model.grid.tables = tables;
        model.diffuse.assign(&floats(b"MLPD")?)?;
        model.specular.assign(&floats(b"MLPS")?)?;
        model.seg.assign(&floats(b"MLPG")?)?;
        model.vanilla.assign(&floats(b"VANL")?)?;

        let mut o = Reader::new(get(b"OPTS")?);
        let t = o.u64()?;
        let n = o.u32()? as usize;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let len = o.u64()? as usize;
            m.push(o.f32s(len)?);
            v.push(o.f32s(len)?);
        }
        let adam = AdamState { t, m, v };
        if adam.m.iter().map(|x| x.len()).ne(model.tensors().iter().map(|x| x.len())) {
            return Err(Error::Format("optimizer state does not match the model".into()));
        }
        let mut scene_hash = [0u8; 32];
        if echo.scene_hash.len() != 64 {
            return Err(Error::Format("bad scene hash in checkpoint".into()));
        }
        for (i, b) in scene_hash.iter_mut().enumerate() {
            *b = u8::from_str_radix(&echo.scene_hash[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Format("bad scene hash in checkpoint".into()))?;
        }
        Ok(Self {
            model,
            config: echo.config,
            step: echo.step,
            adam,
            scene_hash,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<[u8; 32]> {
        Ok(sha256(&self.to_bytes()?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::ModelConfig;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            rng_seed: 3,
            ..Default::default()
        };
        let mut model = AppearanceModel::new(ModelConfig::default(), 3).unwrap();
        model.diffuse.head.bias[1] = 0.123456789;
        let mut adam = AdamState::new(&model);
        adam.t = 7;
        adam.m[1][0] = 0.5;
        Checkpoint::from_model(&model, &config, 42, &adam, [9u8; 32])
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn corrupt_input_is_a_format_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
