//! Binary container for [`OfflineBundle`].
//!
//! Little-endian layout: the 8-byte magic `SKFEM01\0`; `u64` values `n`,
//! `ρ`, `kd`; `f64` arrays `Ψ` (column-major, `n·ρ`), eigenvalues (`ρ`),
//! leverage scores (`kd`), sampling probabilities (`kd`), reduced load
//! (`ρ`); finally the 32-byte mesh fingerprint.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::reduction::OfflineBundle;

pub const MAGIC: &[u8; 8] = b"SKFEM01\0";
const FAMILY: &[u8] = b"SKFEM";
const HEADER_LEN: usize = 8 + 3 * 8;

pub fn encode(bundle: &OfflineBundle) -> Vec<u8> {
    let (n, rho, kd) = (bundle.n(), bundle.rho(), bundle.kd());
    let floats = n * rho + 2 * rho + 2 * kd;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * floats + 32);
    out.extend_from_slice(MAGIC);
    for v in [n, rho, kd] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let arrays: [&[f64]; 5] = [
        bundle.psi.as_slice(),
        &bundle.eigenvalues,
        &bundle.leverage,
        &bundle.q,
        bundle.reduced_load.as_slice(),
    ];
    for arr in arrays {
        for x in arr {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&bundle.fingerprint);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn floats(&mut self, len: usize) -> Vec<f64> {
        let out = self.bytes[self.pos..self.pos + 8 * len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 8 * len;
        out
    }
}

/// Parses and validates a container.
pub fn decode(bytes: &[u8]) -> Result<OfflineBundle> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let msg = if bytes.starts_with(FAMILY) {
            format!(
                "version tag {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..bytes.len().min(8)]),
                "SKFEM01"
            )
        } else {
            "missing magic header".to_string()
        };
        return Err(Error::BundleVersion(msg));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::BundleFormat(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    let mut r = Reader { bytes, pos: 8 };
    let (n, rho, kd) = (r.u64(), r.u64(), r.u64());
    let floats = n
        .checked_mul(rho)
        .and_then(|x| x.checked_add(rho.checked_mul(2)?))
        .and_then(|x| x.checked_add(kd.checked_mul(2)?))
        .and_then(|x| x.checked_mul(8))
        .and_then(|x| x.checked_add(HEADER_LEN as u64 + 32))
        .ok_or_else(|| Error::BundleFormat("header sizes overflow".into()))?;
    if (bytes.len() as u64) < floats {
        return Err(Error::BundleFormat(format!(
            "truncated: {} of {floats} bytes",
            bytes.len()
        )));
    }
    if (bytes.len() as u64) > floats {
        return Err(Error::BundleFormat(format!(
            "{} trailing bytes",
            bytes.len() as u64 - floats
        )));
    }
    let (n, rho, kd) = (n as usize, rho as usize, kd as usize);
    let psi = DMatrix::from_vec(n, rho, r.floats(n * rho));
    let eigenvalues = r.floats(rho);
    let leverage = r.floats(kd);
    let q = r.floats(kd);
    let reduced_load = DVector::from_vec(r.floats(rho));
    let fingerprint: [u8; 32] = bytes[r.pos..r.pos + 32].try_into().unwrap();
    let bundle = OfflineBundle {
        psi,
        eigenvalues,
        leverage,
        q,
        reduced_load,
        fingerprint,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &OfflineBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<OfflineBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
