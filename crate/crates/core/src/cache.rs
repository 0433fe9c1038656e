//! Bit-exact binary persistence of path ensembles.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `BSDE` | 4 bytes |
//! | format version | `u32` |
//! | paths `N` | `u64` |
//! | steps `J` | `u64` |
//! | seed | `u64` |
//! | model tag (0 natural, 1 enlarged Brownian, 2 initial enlargement) | `u8` |
//! | law tag (0 normal, 1 uniform) and two parameters, initial enlargement only | `u8`, `f64`, `f64` |
//! | knots `t_0 … t_J` | `(J+1) × f64` |
//! | primary increments, path-major | `N·J × f64` |
//! | auxiliary increments, enlarged Brownian only | `N·J × f64` |
//! | revealed variables, initial enlargement only | `N × f64` |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ensemble::{FiltrationModel, PathEnsemble, XiLaw};
use crate::error::{BsdeError, Result};
use crate::grid::TimeGrid;

pub const MAGIC: [u8; 4] = *b"BSDE";
pub const FORMAT_VERSION: u32 = 1;

/// Serialize an ensemble to bytes.
pub fn encode(ens: &PathEnsemble) -> Vec<u8> {
    let (n, steps) = (ens.n_paths(), ens.steps());
    let mut out = Vec::with_capacity(64 + 8 * (n * steps * 2 + steps + 1 + n));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(steps as u64).to_le_bytes());
    out.extend_from_slice(&ens.seed().to_le_bytes());
    out.push(ens.model().tag());
    if let FiltrationModel::InitialEnlargement { xi } = ens.model() {
        let (tag, a, b) = match *xi {
            XiLaw::Normal { mean, std } => (0u8, mean, std),
            XiLaw::Uniform { low, high } => (1u8, low, high),
        };
        out.push(tag);
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    let mut floats = |xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    floats(ens.grid().knots());
    floats(ens.increments());
    if let Some(a) = ens.aux_increments() {
        floats(a);
    }
    if let Some(x) = ens.initial_variables() {
        floats(x);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            BsdeError::CacheFormat(format!(
                "truncated file: {what} needs {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| BsdeError::CacheFormat(format!("{what}: size overflow")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Parse bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<PathEnsemble> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(BsdeError::CacheFormat(format!("bad magic bytes {magic:?}")));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(BsdeError::CacheVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let to_usize = |v: u64, what: &str| usize::try_from(v).map_err(|_| BsdeError::CacheFormat(format!("{what} {v} too large")));
    let n = to_usize(c.u64("path count")?, "path count")?;
    let steps = to_usize(c.u64("step count")?, "step count")?;
    let seed = c.u64("seed")?;
    let model = match c.u8("model tag")? {
        0 => FiltrationModel::Natural,
        1 => FiltrationModel::EnlargedBrownian,
        2 => {
            let law = c.u8("law tag")?;
            let (a, b) = (c.f64("law parameter")?, c.f64("law parameter")?);
            let xi = match law {
                0 => XiLaw::Normal { mean: a, std: b },
                1 => XiLaw::Uniform { low: a, high: b },
                t => return Err(BsdeError::CacheFormat(format!("unknown law tag {t}"))),
            };
            FiltrationModel::InitialEnlargement { xi }
        }
        t => return Err(BsdeError::CacheFormat(format!("unknown model tag {t}"))),
    };
    let block = n
        .checked_mul(steps)
        .ok_or_else(|| BsdeError::CacheFormat("block size overflow".into()))?;
    let grid = TimeGrid::from_knots(c.floats(steps + 1, "knots")?)?;
    let dw = c.floats(block, "primary increments")?;
    let aux = if model.has_aux_noise() {
        Some(c.floats(block, "auxiliary increments")?)
    } else {
        None
    };
    let xi = if model.has_initial_variable() {
        Some(c.floats(n, "revealed variables")?)
    } else {
        None
    };
    if c.pos != bytes.len() {
        return Err(BsdeError::CacheFormat(format!(
            "{} trailing bytes after the last block",
            bytes.len() - c.pos
        )));
    }
    PathEnsemble::from_parts(grid, model, n, seed, dw, aux, xi)
}

pub fn save(ens: &PathEnsemble, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(ens))?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PathEnsemble> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<FiltrationModel> {
        vec![
            FiltrationModel::Natural,
            FiltrationModel::EnlargedBrownian,
            FiltrationModel::InitialEnlargement {
                xi: XiLaw::Uniform { low: -1.0, high: 2.0 },
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (k, m) in models().into_iter().enumerate() {
            let e = PathEnsemble::simulate(&TimeGrid::uniform(0.7, 5).unwrap(), m, 13, 40 + k as u64).unwrap();
            let path = dir.path().join(format!("e{k}.bin"));
            save(&e, &path).unwrap();
            let back = load(&path).unwrap();
            assert_eq!(back, e);
            assert_eq!(back.id(), e.id());
        }
    }

    #[test]
    fn header_layout() {
        let e = PathEnsemble::simulate(&TimeGrid::uniform(1.0, 3).unwrap(), FiltrationModel::Natural, 2, 9).unwrap();
        let b = encode(&e);
        assert_eq!(&b[..4], b"BSDE");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 9);
        assert_eq!(b[32], 0);
        assert_eq!(b.len(), 33 + 8 * (4 + 6));
        let first = f64::from_le_bytes(b[33 + 32..33 + 40].try_into().unwrap());
        assert_eq!(first.to_bits(), e.dw(0, 0).to_bits());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let e = PathEnsemble::simulate(&TimeGrid::uniform(1.0, 3).unwrap(), FiltrationModel::EnlargedBrownian, 4, 1).unwrap();
        let good = encode(&e);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(BsdeError::CacheFormat(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(BsdeError::CacheVersion { found: 2, expected: 1 })));
        assert!(matches!(decode(&good[..good.len() - 1]), Err(BsdeError::CacheFormat(_))));
        assert!(matches!(decode(&good[..10]), Err(BsdeError::CacheFormat(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(BsdeError::CacheFormat(_))));
    }
}
