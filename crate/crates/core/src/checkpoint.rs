//! Binary checkpoints for parameter vectors and Kalman states.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        4 bytes  "KDCK"
//! version      u32      1
//! kind         u8       0 = parameters, 1 = kalman state
//! layers       u32      number of layer sizes L
//! sizes        L x u64  architecture, input first
//! n            u64      parameter count
//! floor        f64      covariance floor (0.0 for kind 0)
//! estimate     n x f64  parameters / filter estimate
//! covariance   n x f64  kind 1 only
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array1;

use crate::kalman::KalmanState;
use crate::nn::{Architecture, ParamVector};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"KDCK";
const VERSION: u32 = 1;
const KIND_PARAMS: u8 = 0;
const KIND_KALMAN: u8 = 1;

fn write_header<W: Write>(w: &mut W, kind: u8, params: &ParamVector, floor: f64) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    let sizes = params.architecture().layer_sizes();
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    w.write_all(&floor.to_le_bytes())?;
    Ok(())
}

fn write_f64s<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_params<W: Write>(mut w: W, params: &ParamVector) -> Result<()> {
    write_header(&mut w, KIND_PARAMS, params, 0.0)?;
    write_f64s(&mut w, params.values().iter())?;
    w.flush()?;
    Ok(())
}

pub fn write_kalman<W: Write>(mut w: W, state: &KalmanState, floor: f64) -> Result<()> {
    write_header(&mut w, KIND_KALMAN, &state.estimate, floor)?;
    write_f64s(&mut w, state.estimate.values().iter())?;
    write_f64s(&mut w, state.covariance().iter())?;
    w.flush()?;
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Array1<f64>> {
        (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>().map(Array1::from)
    }
}

enum Loaded {
    Params(ParamVector),
    Kalman(KalmanState, f64),
}

fn read_any<R: Read>(r: R) -> Result<Loaded> {
    let mut r = Reader(r);
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let [kind] = r.bytes::<1>()?;
    let layers = r.u32()? as usize;
    let sizes = (0..layers).map(|_| r.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let arch = Arc::new(Architecture::new(sizes)?);
    let n = r.u64()? as usize;
    if n != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match architecture {arch}"
        )));
    }
    let floor = r.f64()?;
    let estimate = ParamVector::from_values(arch, r.f64s(n)?)?;
    match kind {
        KIND_PARAMS => Ok(Loaded::Params(estimate)),
        KIND_KALMAN => Ok(Loaded::Kalman(KalmanState::new(estimate, r.f64s(n)?)?, floor)),
        other => Err(Error::Checkpoint(format!("unknown kind {other}"))),
    }
}

pub fn read_params<R: Read>(r: R) -> Result<ParamVector> {
    match read_any(r)? {
        Loaded::Params(p) => Ok(p),
        Loaded::Kalman(..) => Err(Error::Checkpoint("expected parameters, found kalman state".into())),
    }
}

/// Returns the state and the floor it was saved with.
pub fn read_kalman<R: Read>(r: R) -> Result<(KalmanState, f64)> {
    match read_any(r)? {
        Loaded::Kalman(s, floor) => Ok((s, floor)),
        Loaded::Params(_) => Err(Error::Checkpoint("expected kalman state, found parameters".into())),
    }
}
