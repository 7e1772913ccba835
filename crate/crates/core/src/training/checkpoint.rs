//! Single-file checkpoint container.
//!
//! Layout: `GOASCKPT`, format version (u32 LE), header length (u64 LE), a JSON
//! header, then every parameter and optimizer buffer as little-endian f32 in
//! the order listed by the header's `blobs`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RngState, TrainConfig};
use crate::error::{GoasError, Result};
use crate::losses::LiveLossTracker;
use crate::networks::{GeneratorMode, Module, NetworkSet};
use crate::nn::{Adam, AdamConfig};
use crate::noise_bank::NoisePrototypeBank;

pub const MAGIC: &[u8; 8] = b"GOASCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Gan,
    Golab,
    Gopad,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: TrainConfig,
    pub nets: NetworkSet<f32>,
    pub bank: Option<NoisePrototypeBank<f32>>,
    /// Optimizer state per parameter group (`gen`, `bank`, `disc`, `lab`, `pad`).
    pub optimizers: BTreeMap<String, Adam<f32>>,
    pub step: u64,
    pub round: u64,
    pub rng: RngState,
    pub live_loss: LiveLossTracker,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    code_version: String,
    kind: CheckpointKind,
    config: TrainConfig,
    n_c: usize,
    n_m: usize,
    gan_patch: usize,
    pad_patch: usize,
    mode: GeneratorMode,
    bank_size: Option<usize>,
    optimizers: BTreeMap<String, OptimizerHeader>,
    step: u64,
    round: u64,
    rng: RngState,
    live_loss: LiveLossTracker,
    blobs: Vec<BlobEntry>,
}

impl Checkpoint {
    fn buffers(&self) -> Vec<(String, &Vec<f32>)> {
        fn push<'a>(out: &mut Vec<(String, &'a Vec<f32>)>, prefix: &str, ps: Vec<&'a Vec<f32>>) {
            for (i, p) in ps.into_iter().enumerate() {
                out.push((format!("{prefix}.{i}"), p));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "gen", self.nets.gen.params());
        push(&mut out, "disc", self.nets.disc.params());
        push(&mut out, "lab", self.nets.lab.params());
        push(&mut out, "pad", self.nets.pad.params());
        if let Some(b) = &self.bank {
            push(&mut out, "bank", vec![&b.sensor, &b.medium]);
        }
        for (name, opt) in &self.optimizers {
            push(&mut out, &format!("adam.{name}.m"), opt.m.iter().collect());
            push(&mut out, &format!("adam.{name}.v"), opt.v.iter().collect());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let buffers = self.buffers();
        let header = Header {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: self.kind,
            config: self.config.clone(),
            n_c: self.nets.n_c,
            n_m: self.nets.n_m,
            gan_patch: self.nets.gan_patch,
            pad_patch: self.nets.pad_patch,
            mode: self.nets.mode,
            bank_size: self.bank.as_ref().map(|b| b.size),
            optimizers: self
                .optimizers
                .iter()
                .map(|(k, o)| (k.clone(), OptimizerHeader { config: o.config, t: o.t }))
                .collect(),
            step: self.step,
            round: self.round,
            rng: self.rng.clone(),
            live_loss: self.live_loss,
            blobs: buffers
                .iter()
                .map(|(name, b)| BlobEntry {
                    name: name.clone(),
                    len: b.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| GoasError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| GoasError::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (_, b) in buffers {
            for v in b {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GoasError::MissingFile(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| GoasError::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |m: &str| GoasError::Checkpoint(format!("{}: {m}", path.display()));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(|_| bad("truncated"))?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(|_| bad("truncated"))?;
        let len = u64::from_le_bytes(u64b) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;

        let nets = NetworkSet::<f32>::new(
            &header.config.arch,
            header.n_c,
            header.n_m,
            header.gan_patch,
            header.pad_patch,
            header.mode,
            0,
        )?;
        let bank = match header.bank_size {
            Some(s) => Some(NoisePrototypeBank::init(
                header.n_c,
                header.n_m,
                s,
                crate::noise_bank::InitScheme::Zeros,
                0,
            )?),
            None => None,
        };
        let optimizers = header
            .optimizers
            .iter()
            .map(|(k, o)| {
                (
                    k.clone(),
                    Adam {
                        config: o.config,
                        m: Vec::new(),
                        v: Vec::new(),
                        t: o.t,
                    },
                )
            })
            .collect();
        let mut ck = Checkpoint {
            kind: header.kind,
            config: header.config,
            nets,
            bank,
            optimizers,
            step: header.step,
            round: header.round,
            rng: header.rng,
            live_loss: header.live_loss,
        };

        let mut blobs: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        let mut raw = Vec::new();
        for e in &header.blobs {
            raw.resize(e.len * 4, 0);
            r.read_exact(&mut raw).map_err(|_| bad(&format!("truncated blob {}", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            blobs.insert(e.name.clone(), data);
        }
        let mut take = |name: String, expected: Option<usize>| -> Result<Vec<f32>> {
            let v = blobs.remove(&name).ok_or_else(|| bad(&format!("missing blob {name}")))?;
            if let Some(n) = expected {
                if v.len() != n {
                    return Err(bad(&format!("blob {name} has {} values, expected {n}", v.len())));
                }
            }
            Ok(v)
        };
        for (prefix, params) in [
            ("gen", ck.nets.gen.params_mut()),
            ("disc", ck.nets.disc.params_mut()),
            ("lab", ck.nets.lab.params_mut()),
            ("pad", ck.nets.pad.params_mut()),
        ] {
            for (i, p) in params.into_iter().enumerate() {
                *p = take(format!("{prefix}.{i}"), Some(p.len()))?;
            }
        }
        if let Some(b) = ck.bank.as_mut() {
            for (i, p) in b.params_mut().into_iter().enumerate() {
                *p = take(format!("bank.{i}"), Some(p.len()))?;
            }
        }
        let names: Vec<String> = ck.optimizers.keys().cloned().collect();
        for name in names {
            let shapes = ck.group_shapes(&name).ok_or_else(|| bad(&format!("unknown optimizer group {name}")))?;
            let opt = ck.optimizers.get_mut(&name).expect("key present");
            for (i, &n) in shapes.iter().enumerate() {
                opt.m.push(take(format!("adam.{name}.m.{i}"), Some(n))?);
                opt.v.push(take(format!("adam.{name}.v.{i}"), Some(n))?);
            }
        }
        if let Some(extra) = blobs.keys().next() {
            return Err(bad(&format!("unexpected blob {extra}")));
        }
        Ok(ck)
    }

    fn group_shapes(&self, group: &str) -> Option<Vec<usize>> {
        Some(match group {
            "gen" => self.nets.gen.param_shapes(),
            "disc" => self.nets.disc.param_shapes(),
            "lab" => self.nets.lab.param_shapes(),
            "pad" => self.nets.pad.param_shapes(),
            "bank" => {
                let b = self.bank.as_ref()?;
                vec![b.sensor.len(), b.medium.len()]
            }
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ArchConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            arch: ArchConfig::toy(),
            patch_size_gan: 8,
            patch_size_pad: 16,
            ..TrainConfig::default()
        };
        let nets = NetworkSet::new(&config.arch, 3, 3, 8, 16, GeneratorMode::Prototypes, 4).unwrap();
        let bank = NoisePrototypeBank::init(3, 3, 8, "gaussian:0.5".parse().unwrap(), 2).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &nets.lab.param_shapes());
        adam.t = 7;
        adam.m[0][0] = 0.25;
        Checkpoint {
            kind: CheckpointKind::Gan,
            config,
            nets,
            bank: Some(bank),
            optimizers: [("lab".to_string(), adam)].into(),
            step: 11,
            round: 5,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(3)),
            live_loss: LiveLossTracker::default(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.nets.gen.params(), ck.nets.gen.params());
        assert_eq!(back.nets.lab.params(), ck.nets.lab.params());
        assert_eq!(back.nets.pad.params(), ck.nets.pad.params());
        assert_eq!(back.bank, ck.bank);
        assert_eq!(back.optimizers, ck.optimizers);
        assert_eq!((back.step, back.round, back.rng.clone()), (11, 5, ck.rng.clone()));
        assert_eq!(back.config, ck.config);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"NOTACKPT....").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(GoasError::Checkpoint(_))));
        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.ckpt")),
            Err(GoasError::MissingFile(_))
        ));
    }
}
