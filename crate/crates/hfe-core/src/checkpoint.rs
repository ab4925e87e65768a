//! Versioned binary container for a [`TrainState`] and its configuration.
//!
//! All integers and floats are little-endian. Layout (version 1):
//!
//! ```text
//! magic        8 bytes   "HFECKPT\0"
//! version      u32       1
//! alpha1..w0   4 × f64   alpha1, alpha2, alpha3, w0
//! lr, decay    2 × f64   learning_rate, weight_decay
//! total_iters  u64
//! seed         u64
//! num_ids      u64       P
//! imgs_per_id  u64       K
//! feature_dim  u64       F
//! embed_dim    u64       D
//! num_attrs    u64       M
//! n_hidden     u64       followed by n_hidden × u64 widths
//! step         u64
//! rng key      32 bytes
//! rng stream   u64
//! rng wordpos  u128
//! n_params     u64       must equal the parameter count implied above
//! params       n_params × f64   canonical order (see `Model::to_flat`)
//! adam m       n_params × f64
//! adam v       n_params × f64
//! ```
//!
//! Trailing bytes are rejected.

use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{AdamMoments, Architecture, Model, TrainState};
use crate::rng::{HfeRng, RngState};
use crate::types::HfeConfig;

pub const MAGIC: [u8; 8] = *b"HFECKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: not an HFE checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),
    #[error("checkpoint declares {declared} parameters, architecture implies {implied}")]
    ParamCount { declared: u64, implied: usize },
    #[error("dimension mismatch for {field}: checkpoint has {found}, expected {expected}")]
    Dimension {
        field: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("checkpoint header is invalid: {0}")]
    InvalidHeader(&'static str),
}

/// Configuration plus training state, as stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: HfeConfig,
    pub state: TrainState,
}

impl Checkpoint {
    /// Fails when the stored network does not accept `feature_dim` inputs or
    /// predict `num_attrs` attributes.
    pub fn check_dims(&self, feature_dim: usize, num_attrs: usize) -> Result<(), CheckpointError> {
        let arch = self.state.model.architecture();
        if arch.num_attrs != num_attrs {
            return Err(CheckpointError::Dimension {
                field: "num_attrs",
                found: arch.num_attrs,
                expected: num_attrs,
            });
        }
        if arch.feature_dim != feature_dim {
            return Err(CheckpointError::Dimension {
                field: "feature_dim",
                found: arch.feature_dim,
                expected: feature_dim,
            });
        }
        Ok(())
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn usize(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64(what)?).map_err(|_| CheckpointError::InvalidHeader(what))
    }
    fn u128(&mut self, what: &'static str) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Serializes the state with the architecture taken from the model itself.
pub fn encode(config: &HfeConfig, state: &TrainState) -> Vec<u8> {
    let arch = state.model.architecture();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.f64s(&[config.alpha1, config.alpha2, config.alpha3, config.w0]);
    w.f64s(&[config.learning_rate, config.weight_decay]);
    w.u64(config.total_iters);
    w.u64(config.seed);
    w.usize(config.num_ids);
    w.usize(config.imgs_per_id);
    w.usize(arch.feature_dim);
    w.usize(arch.embed_dim);
    w.usize(arch.num_attrs);
    w.usize(arch.hidden_dims.len());
    for &h in &arch.hidden_dims {
        w.usize(h);
    }
    w.u64(state.step);
    let rng = state.rng.state();
    w.0.extend_from_slice(&rng.key);
    w.u64(rng.stream);
    w.0.extend_from_slice(&rng.word_pos.to_le_bytes());
    let params = state.model.to_flat();
    w.usize(params.len());
    w.f64s(&params);
    w.f64s(&state.moments.m);
    w.f64s(&state.moments.v);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 8] = r.array("magic").map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let alpha1 = r.f64("alpha1")?;
    let alpha2 = r.f64("alpha2")?;
    let alpha3 = r.f64("alpha3")?;
    let w0 = r.f64("w0")?;
    let learning_rate = r.f64("learning_rate")?;
    let weight_decay = r.f64("weight_decay")?;
    let total_iters = r.u64("total_iters")?;
    let seed = r.u64("seed")?;
    let num_ids = r.usize("num_ids")?;
    let imgs_per_id = r.usize("imgs_per_id")?;
    let feature_dim = r.usize("feature_dim")?;
    let embed_dim = r.usize("embed_dim")?;
    let num_attrs = r.usize("num_attrs")?;
    let n_hidden = r.usize("n_hidden")?;
    if n_hidden > bytes.len() / 8 {
        return Err(CheckpointError::Truncated("hidden_dims"));
    }
    let hidden_dims = (0..n_hidden)
        .map(|_| r.usize("hidden_dims"))
        .collect::<Result<Vec<_>, _>>()?;
    if feature_dim == 0 || embed_dim == 0 || num_attrs == 0 || hidden_dims.contains(&0) {
        return Err(CheckpointError::InvalidHeader("zero dimension"));
    }
    let step = r.u64("step")?;
    let key = r.array::<32>("rng key")?;
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng word position")?;
    let declared = r.u64("parameter count")?;

    let arch = Architecture {
        feature_dim,
        hidden_dims: hidden_dims.clone(),
        embed_dim,
        num_attrs,
    };
    let implied = implied_params(&arch).ok_or(CheckpointError::InvalidHeader("dimensions overflow"))?;
    if declared != implied as u64 {
        return Err(CheckpointError::ParamCount { declared, implied });
    }
    // Reject absurd sizes before allocating.
    if implied.saturating_mul(24) > bytes.len() - r.pos {
        return Err(CheckpointError::Truncated("parameters"));
    }
    let mut model = Model::zeros(&arch);
    let params = r.f64s(implied, "parameters")?;
    model
        .set_flat(&params)
        .map_err(|_| CheckpointError::ParamCount { declared, implied })?;
    let m = r.f64s(implied, "adam first moments")?;
    let v = r.f64s(implied, "adam second moments")?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    let config = HfeConfig {
        alpha1,
        alpha2,
        alpha3,
        w0,
        total_iters,
        feature_dim,
        hidden_dims,
        embed_dim,
        num_attrs,
        num_ids,
        imgs_per_id,
        learning_rate,
        weight_decay,
        seed,
    };
    let state = TrainState {
        model,
        moments: AdamMoments { m, v },
        step,
        rng: HfeRng::from_state(&RngState {
            key,
            stream,
            word_pos,
        }),
    };
    Ok(Checkpoint { config, state })
}

fn implied_params(arch: &Architecture) -> Option<usize> {
    let mut total = 0usize;
    let mut width = arch.feature_dim;
    for &h in &arch.hidden_dims {
        total = total.checked_add(width.checked_mul(h)?.checked_add(h)?)?;
        width = h;
    }
    let branch = width
        .checked_mul(arch.embed_dim)?
        .checked_add(arch.embed_dim)?
        .checked_add(arch.embed_dim + 1)?;
    total.checked_add(branch.checked_mul(arch.num_attrs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::initial_state;
    use alloc::string::ToString;
    use alloc::vec;

    fn small() -> (HfeConfig, TrainState) {
        let config = HfeConfig {
            feature_dim: 4,
            hidden_dims: vec![6, 5],
            embed_dim: 3,
            num_attrs: 2,
            ..HfeConfig::default()
        };
        let mut state = initial_state(&config);
        state.step = 17;
        state.moments.m[3] = 0.25;
        state.moments.v[4] = 1e-300;
        state.rng.next_u64();
        (config, state)
    }

    #[test]
    fn round_trip_is_exact() {
        let (config, state) = small();
        let bytes = encode(&config, &state);
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.config, config);
        assert_eq!(ck.state, state);
        assert_eq!(implied_params(&state.model.architecture()), Some(state.model.num_params()));
    }

    #[test]
    fn corrupted_magic() {
        let (config, state) = small();
        let mut bytes = encode(&config, &state);
        bytes[0] = b'X';
        assert_eq!(decode(&bytes), Err(CheckpointError::BadMagic));
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
        assert_eq!(decode(b"HFE"), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn version_truncation_and_trailing() {
        let (config, state) = small();
        let bytes = encode(&config, &state);
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert_eq!(
            decode(&v2),
            Err(CheckpointError::Version {
                found: 2,
                expected: 1
            })
        );
        for cut in [12, 40, 150, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode(&long), Err(CheckpointError::TrailingBytes(1)));
    }

    #[test]
    fn dimension_check() {
        let (config, state) = small();
        let ck = decode(&encode(&config, &state)).unwrap();
        ck.check_dims(4, 2).unwrap();
        assert!(matches!(
            ck.check_dims(4, 3),
            Err(CheckpointError::Dimension { field: "num_attrs", found: 2, expected: 3 })
        ));
    }
}
