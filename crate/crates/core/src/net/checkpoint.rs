//! Binary model checkpoints (little-endian).
//!
//! ```text
//! offset  size  field
//! 0       8     magic "LSBMODEL"
//! 8       4     u32 version (1)
//! 12      12    u32 width, u32 n_blocks, u32 skip_stride
//! 24      8     u64 seed
//! 32      72    f64 mu_x[3], sigma_x[3], mu_log, sigma_log, epsilon
//! 104     8     u64 parameter count P
//! 112     8     u64 running-statistic count R
//! 120     8P    f64 parameters, in model parameter order
//! ..      8R    f64 running statistics, in batch-norm order
//! ..      4     u32 CRC-32 of every preceding byte
//! ```
//!
//! Total size is `124 + 8 (P + R)` bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::{ClearanceModel, MlpConfig, MlpModel, NetError};
use crate::dataset::NormStats;

pub const MODEL_MAGIC: [u8; 8] = *b"LSBMODEL";
pub const MODEL_VERSION: u32 = 1;
const HEADER: usize = 120;

/// Size in bytes of a checkpoint for `cfg`.
pub fn checkpoint_size(cfg: &MlpConfig) -> usize {
    HEADER + 8 * (cfg.param_count() + cfg.running_count()) + 4
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &ClearanceModel) -> Result<(), NetError> {
    let cfg = model.model.config();
    let s = &model.stats;
    let mut buf = Vec::with_capacity(checkpoint_size(cfg));
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [cfg.width, cfg.n_blocks, cfg.skip_stride] {
        let v = u32::try_from(v).map_err(|_| NetError::Config("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    let stats = s.mu_x.iter().chain(&s.sigma_x).chain([&s.mu_log, &s.sigma_log, &s.epsilon]);
    for v in stats {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let params = model.model.param_tensors();
    let running = model.model.running_tensors();
    let count = |ts: &[&[f64]]| ts.iter().map(|t| t.len()).sum::<usize>() as u64;
    buf.extend_from_slice(&count(&params).to_le_bytes());
    buf.extend_from_slice(&count(&running).to_le_bytes());
    for v in params.iter().chain(&running).flat_map(|t| t.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ClearanceModel, NetError> {
    let mut b = Vec::new();
    r.read_to_end(&mut b)?;
    if b.len() >= 8 && b[..8] != MODEL_MAGIC {
        return Err(NetError::BadMagic);
    }
    if b.len() < HEADER + 4 {
        return Err(NetError::CorruptChecksum);
    }
    let version = u32_at(&b, 8);
    if version != MODEL_VERSION {
        return Err(NetError::VersionMismatch { found: version });
    }
    let body = b.len() - 4;
    if crc32fast::hash(&b[..body]) != u32_at(&b, body) {
        return Err(NetError::CorruptChecksum);
    }
    let cfg = MlpConfig {
        width: u32_at(&b, 12) as usize,
        n_blocks: u32_at(&b, 16) as usize,
        skip_stride: u32_at(&b, 20) as usize,
        seed: u64_at(&b, 24),
    };
    let f: Vec<f64> = (0..9).map(|k| f64_at(&b, 32 + 8 * k)).collect();
    let stats = NormStats {
        mu_x: [f[0], f[1], f[2]],
        sigma_x: [f[3], f[4], f[5]],
        mu_log: f[6],
        sigma_log: f[7],
        epsilon: f[8],
    };
    let mut model = MlpModel::init(cfg)?;
    let (np, nr) = (u64_at(&b, 104) as usize, u64_at(&b, 112) as usize);
    if np != cfg.param_count() || nr != cfg.running_count() || body != HEADER + 8 * (np + nr) {
        return Err(NetError::CorruptChecksum);
    }
    let mut at = HEADER;
    for t in model.param_tensors_mut() {
        for v in t.iter_mut() {
            *v = f64_at(&b, at);
            at += 8;
        }
    }
    for t in model.running_tensors_mut() {
        for v in t.iter_mut() {
            *v = f64_at(&b, at);
            at += 8;
        }
    }
    Ok(ClearanceModel { model, stats })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ClearanceModel) -> Result<(), NetError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClearanceModel, NetError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> ClearanceModel {
        let mut model = MlpModel::init(MlpConfig { width: 16, n_blocks: 4, skip_stride: 2, seed: 21 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in model.running_tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
        let stats = NormStats {
            mu_x: [2.5, 2.4, 0.01],
            sigma_x: [1.4, 1.5, 1.8],
            mu_log: -0.3,
            sigma_log: 0.7,
            epsilon: 0.25,
        };
        ClearanceModel { model, stats }
    }

    fn bytes(m: &ClearanceModel) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(&mut b, m).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model();
        let b = bytes(&m);
        assert_eq!(b.len(), checkpoint_size(m.model.config()));
        let back = read_checkpoint(&b[..]).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            assert_eq!(m.model.forward(x, Mode::Eval).to_bits(), back.model.forward(x, Mode::Eval).to_bits());
        }
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let b = bytes(&sample_model());
        for cut in [4, 20, HEADER, b.len() - 1] {
            assert!(matches!(read_checkpoint(&b[..cut]), Err(NetError::CorruptChecksum)), "cut {cut}");
        }
        let mut flipped = b.clone();
        flipped[HEADER + 17] ^= 0x40;
        assert!(matches!(read_checkpoint(&flipped[..]), Err(NetError::CorruptChecksum)));
    }

    #[test]
    fn header_errors() {
        let mut b = bytes(&sample_model());
        b[8] = 7;
        assert!(matches!(read_checkpoint(&b[..]), Err(NetError::VersionMismatch { found: 7 })));
        b[0] = b'X';
        assert!(matches!(read_checkpoint(&b[..]), Err(NetError::BadMagic)));
    }

    #[test]
    fn paper_scale_size() {
        // Hand count for h = 2048, L = 6 with skips from blocks 1 and 3.
        let h = 2048usize;
        let unit = |i: usize, o: usize| i * o + 3 * o;
        let params = unit(3, 512) + unit(512, 1024) + unit(1024, h)
            + 12 * unit(h, h)
            + 2 * h * h
            + unit(h, 1024) + unit(1024, 512) + 512 + 1;
        let running = 2 * (512 + 1024 + h + 12 * h + 1024 + 512);
        assert_eq!(params, 64_054_273);
        assert_eq!(checkpoint_size(&MlpConfig::paper(0)), 124 + 8 * (params + running));
    }
}
