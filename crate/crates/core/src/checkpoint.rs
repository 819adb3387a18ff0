//! Binary checkpoint container ("MIDC").
//!
//! ```text
//! magic        "MIDC"
//! version      u16
//! total_len    u64   length of the whole file, checksum included
//! config_hash  u64
//! process      u32 length + UTF-8 TOML
//! arch         u32 length + UTF-8 TOML
//! epochs       u64   epochs completed
//! steps        u64   optimizer steps taken
//! seed         u64
//! networks     u32 count, then per network:
//!                name (u32 length + UTF-8), u32 param count, then per param:
//!                name, value/adam_m/adam_v as MIDT records, step_count u64
//! checksum     u64   FNV-1a over every preceding byte
//! ```
//!
//! All integers are little-endian. Load errors are checked in this order:
//! magic, version, length, checksum, then structure.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MidError, Result};
use crate::hash::fnv1a64;
use crate::networks::{ArchSpec, NoisePredictor, StepPredictor};
use crate::noise::NoiseProcessSpec;
use crate::numerics::{read_exact, read_u16, read_u32, read_u64, Param, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MIDC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Offset of the `total_len` field.
const LEN_OFFSET: usize = 6;
const HEADER_LEN: usize = LEN_OFFSET + 8;

/// Trained (or freshly initialized) Ψ and Φ with everything needed to resume
/// training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub process: NoiseProcessSpec,
    pub arch: ArchSpec,
    pub epochs_completed: u64,
    pub step_counter: u64,
    pub seed: u64,
    pub psi: StepPredictor,
    pub phi: NoisePredictor,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn get_str(r: &mut &[u8], what: &str) -> Result<String> {
    let n = read_u32(r, what)? as usize;
    if n > r.len() {
        return Err(MidError::Malformed(format!(
            "{what}: length {n} exceeds remaining {} bytes",
            r.len()
        )));
    }
    let mut buf = vec![0u8; n];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| MidError::Malformed(format!("{what} is not UTF-8")))
}

fn put_params<'a>(out: &mut Vec<u8>, name: &str, params: impl Iterator<Item = &'a Param>) {
    let params: Vec<&Param> = params.collect();
    put_str(out, name);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        put_str(out, &p.name);
        for t in [&p.value, &p.adam_m, &p.adam_v] {
            t.write_to(out).expect("writing to a Vec cannot fail");
        }
        out.extend_from_slice(&p.step_count.to_le_bytes());
    }
}

fn get_params<'a>(r: &mut &[u8], name: &str, params: impl Iterator<Item = &'a mut Param>) -> Result<()> {
    let found = get_str(r, "network name")?;
    if found != name {
        return Err(MidError::Malformed(format!(
            "expected network {name:?}, found {found:?}"
        )));
    }
    let mut params: Vec<&mut Param> = params.collect();
    let n = read_u32(r, "parameter count")? as usize;
    if n != params.len() {
        return Err(MidError::Malformed(format!(
            "network {name} stores {n} parameters, architecture has {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let pname = get_str(r, "parameter name")?;
        if pname != p.name {
            return Err(MidError::Malformed(format!(
                "expected parameter {:?}, found {pname:?}",
                p.name
            )));
        }
        let value = Tensor::read_from(r)?;
        let m = Tensor::read_from(r)?;
        let v = Tensor::read_from(r)?;
        for (t, what) in [(&value, "value"), (&m, "adam_m"), (&v, "adam_v")] {
            if t.shape() != p.value.shape() {
                return Err(MidError::Malformed(format!(
                    "{} {what}: shape {:?}, architecture expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
        }
        p.value = value;
        p.adam_m = m;
        p.adam_v = v;
        p.zero_grad();
        p.step_count = read_u64(r, "parameter step count")?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        put_str(&mut out, &self.process.to_config_text());
        put_str(
            &mut out,
            &toml::to_string(&self.arch).expect("arch is always representable"),
        );
        for v in [self.epochs_completed, self.step_counter, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&2u32.to_le_bytes());
        put_params(&mut out, "psi", self.psi.params());
        put_params(&mut out, "phi", self.phi.params());
        let total = (out.len() + 8) as u64;
        out[LEN_OFFSET..HEADER_LEN].copy_from_slice(&total.to_le_bytes());
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(MidError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = read_u16(&mut r, "checkpoint version")?;
        if version == 0 || version > CHECKPOINT_VERSION {
            return Err(MidError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let total = read_u64(&mut r, "checkpoint length")?;
        if (bytes.len() as u64) < total {
            return Err(MidError::Truncated(format!(
                "checkpoint declares {total} bytes, file has {}",
                bytes.len()
            )));
        }
        if (bytes.len() as u64) > total {
            return Err(MidError::Malformed(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() as u64 - total
            )));
        }
        if total < (HEADER_LEN + 8) as u64 {
            return Err(MidError::Malformed(format!("declared length {total} is too small")));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(MidError::Integrity { stored, computed });
        }

        let mut r = &body[HEADER_LEN..];
        let config_hash = read_u64(&mut r, "config hash")?;
        let process = NoiseProcessSpec::from_config_text(&get_str(&mut r, "process spec")?)
            .map_err(|e| MidError::Malformed(e.to_string()))?;
        let arch: ArchSpec = toml::from_str(&get_str(&mut r, "architecture")?)
            .map_err(|e| MidError::Malformed(format!("architecture: {e}")))?;
        arch.validate().map_err(|e| MidError::Malformed(e.to_string()))?;
        let epochs_completed = read_u64(&mut r, "epoch counter")?;
        let step_counter = read_u64(&mut r, "step counter")?;
        let seed = read_u64(&mut r, "seed")?;
        let n_nets = read_u32(&mut r, "network count")?;
        if n_nets != 2 {
            return Err(MidError::Malformed(format!("expected 2 networks, found {n_nets}")));
        }
        // Shapes come from the architecture; values are overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut psi = StepPredictor::new(&arch, &mut rng)?;
        let mut phi = NoisePredictor::new(&arch, &mut rng)?;
        get_params(&mut r, "psi", psi.params_mut())?;
        get_params(&mut r, "phi", phi.params_mut())?;
        if !r.is_empty() {
            return Err(MidError::Malformed(format!("{} unread bytes before checksum", r.len())));
        }
        Ok(Checkpoint {
            config_hash,
            process,
            arch,
            epochs_completed,
            step_counter,
            seed,
            psi,
            phi,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
