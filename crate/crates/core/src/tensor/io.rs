//! `EPT1` tensor files: magic `EPT1`, a dtype byte, a rank byte, `rank`
//! little-endian u32 dims, then the row-major little-endian payload.

use std::io::{Read, Write};

use super::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn from_code(code: u8) -> Result<DType> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// The dtype matching [`Real`].
    pub fn native() -> DType {
        if std::mem::size_of::<Real>() == 4 {
            DType::F32
        } else {
            DType::F64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ept1Header {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

pub fn write_ept1(mut w: impl Write, tensor: &Tensor, dtype: DType) -> Result<()> {
    let io = |e| Error::Format(format!("write failed: {e}"));
    let rank = u8::try_from(tensor.rank()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
    let mut buf = Vec::with_capacity(6 + 4 * tensor.rank() + dtype.width() * tensor.numel());
    buf.extend_from_slice(MAGIC);
    buf.push(dtype as u8);
    buf.push(rank);
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in tensor.data() {
        match dtype {
            DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => buf.extend_from_slice(&(v as f64).to_le_bytes()),
        }
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_ept1_header(mut r: impl Read) -> Result<Ept1Header> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("missing EPT1 magic".into()));
    }
    let dtype = DType::from_code(head[4])?;
    let rank = head[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)
            .map_err(|e| Error::Format(format!("truncated dims: {e}")))?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    Ok(Ept1Header { dtype, shape })
}

pub fn read_ept1(mut r: impl Read) -> Result<Tensor> {
    let header = read_ept1_header(&mut r)?;
    let n: usize = header.shape.iter().product();
    let mut payload = vec![0u8; n * header.dtype.width()];
    r.read_exact(&mut payload)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    let data: Vec<Real> = match header.dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect(),
    };
    Tensor::new(data, &header.shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(vec![1.0, -2.5], &[1, 2]).unwrap();
        let mut buf = Vec::new();
        write_ept1(&mut buf, &t, DType::F32).unwrap();
        let mut expected = b"EPT1".to_vec();
        expected.extend([1u8, 2]);
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_ept1(&b"EPT2\x02\x01\x01\x00\x00\x00"[..]).is_err());
        let t = Tensor::new(vec![1.0; 4], &[4]).unwrap();
        let mut buf = Vec::new();
        write_ept1(&mut buf, &t, DType::F64).unwrap();
        assert!(read_ept1(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn header_only_read() {
        let t = Tensor::zeros(&[3, 4, 4]);
        let mut buf = Vec::new();
        write_ept1(&mut buf, &t, DType::F64).unwrap();
        let h = read_ept1_header(&buf[..]).unwrap();
        assert_eq!(h, Ept1Header { dtype: DType::F64, shape: vec![3, 4, 4] });
    }
}
