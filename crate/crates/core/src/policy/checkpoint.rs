//! Binary parameter checkpoints.
//!
//! Single network:
//! `b"RISLABPN"`, version u32, kind u8, history u32, dense width u32,
//! head count u32, head sizes u32 each, dropout (lstm, dense) f64 each,
//! N u64, seed u64, then N little-endian f64 values.
//!
//! Controller (one centralized net or one net per agent):
//! `b"RISLABCT"`, version u32, mu f64, horizon u32, net count u32, then each
//! network block as above.

use std::path::Path;

use super::{ControllerKind, NetworkArchitecture, PolicyNet, PolicyParams};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_VERSION: u32 = 1;
const NET_MAGIC: &[u8; 8] = b"RISLABPN";
const CTRL_MAGIC: &[u8; 8] = b"RISLABCT";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn put_net(out: &mut Vec<u8>, net: &PolicyNet, seed: u64) {
    let arch = &net.arch;
    out.extend_from_slice(NET_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match arch.kind {
        ControllerKind::Centralized => 0,
        ControllerKind::Distributed => 1,
    });
    out.extend_from_slice(&(arch.history as u32).to_le_bytes());
    out.extend_from_slice(&(arch.dense_width as u32).to_le_bytes());
    out.extend_from_slice(&(arch.heads.len() as u32).to_le_bytes());
    for &k in &arch.heads {
        out.extend_from_slice(&(k as u32).to_le_bytes());
    }
    out.extend_from_slice(&arch.dropout_lstm.to_le_bytes());
    out.extend_from_slice(&arch.dropout_dense.to_le_bytes());
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    for v in net.params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_net(r: &mut Reader<'_>) -> Result<(PolicyNet, u64)> {
    if r.take(8)? != NET_MAGIC {
        return Err(Error::Checkpoint("bad network magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = match r.u8()? {
        0 => ControllerKind::Centralized,
        1 => ControllerKind::Distributed,
        k => return Err(Error::Checkpoint(format!("unknown network kind {k}"))),
    };
    let history = r.u32()? as usize;
    let dense_width = r.u32()? as usize;
    let n_heads = r.u32()? as usize;
    if n_heads > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible head count {n_heads}")));
    }
    let heads = (0..n_heads)
        .map(|_| r.u32().map(|k| k as usize))
        .collect::<Result<Vec<_>>>()?;
    let (p1, p2) = (r.f64()?, r.f64()?);
    let arch = NetworkArchitecture::new(kind, history, heads, dense_width, p1, p2)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = r.u64()? as usize;
    if n != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "header declares {n} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let seed = r.u64()?;
    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let net = PolicyNet::new(arch, PolicyParams::from_vec(values))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((net, seed))
}

pub fn encode_checkpoint(net: &PolicyNet, seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * net.params.len());
    put_net(&mut out, net, seed);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PolicyNet, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    let out = get_net(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint(net: &PolicyNet, seed: u64, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net, seed))
}

pub fn read_checkpoint(path: &Path) -> Result<(PolicyNet, u64)> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Every network of a trained controller plus the risk settings it was
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerCheckpoint {
    pub mu: f64,
    pub horizon: usize,
    pub seed: u64,
    pub nets: Vec<PolicyNet>,
}

pub fn encode_controller(ckpt: &ControllerCheckpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CTRL_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.mu.to_le_bytes());
    out.extend_from_slice(&(ckpt.horizon as u32).to_le_bytes());
    out.extend_from_slice(&(ckpt.nets.len() as u32).to_le_bytes());
    for net in &ckpt.nets {
        put_net(&mut out, net, ckpt.seed);
    }
    out
}

pub fn decode_controller(bytes: &[u8]) -> Result<ControllerCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CTRL_MAGIC {
        return Err(Error::Checkpoint("bad controller magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mu = r.f64()?;
    let horizon = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count == 0 || count > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible network count {count}")));
    }
    let mut nets = Vec::with_capacity(count);
    let mut seed = 0;
    for _ in 0..count {
        let (net, s) = get_net(&mut r)?;
        seed = s;
        nets.push(net);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ControllerCheckpoint {
        mu,
        horizon,
        seed,
        nets,
    })
}

pub fn write_controller(ckpt: &ControllerCheckpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_controller(ckpt))
}

pub fn read_controller(path: &Path) -> Result<ControllerCheckpoint> {
    decode_controller(&std::fs::read(path)?)
}
