//! Little-endian binary encoding shared by checkpoints and snapshots.

use crc::{Crc, CRC_64_XZ};

use crate::grad::Tensor;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("unexpected end of data at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("invalid UTF-8 string at byte {0}")]
    Utf8(usize),
    #[error("invalid tensor at byte {0}")]
    Tensor(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }

    /// Appends the CRC-64 of everything written so far and returns the buffer.
    pub fn seal(mut self) -> Vec<u8> {
        let sum = crc64(&self.buf);
        self.u64(sum);
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Verifies the trailing checksum and reads the payload before it.
    pub fn unseal(data: &'a [u8]) -> Result<Self, CodecError> {
        if data.len() < 8 {
            return Err(CodecError::Truncated(data.len()));
        }
        let (body, tail) = data.split_at(data.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = crc64(body);
        if stored != computed {
            return Err(CodecError::Checksum { stored, computed });
        }
        Ok(ByteReader { buf: body, pos: 0 })
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::Utf8(at))
    }

    pub fn tensor(&mut self) -> Result<Tensor, CodecError> {
        let at = self.pos;
        let ndim = self.u32()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(CodecError::Tensor(at));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for _ in 0..ndim {
            let d = self.u64()? as usize;
            count = count.checked_mul(d).ok_or(CodecError::Tensor(at))?;
            shape.push(d);
        }
        if count
            .checked_mul(8)
            .is_none_or(|b| b > self.buf.len() - self.pos)
        {
            return Err(CodecError::Truncated(self.pos));
        }
        let data = (0..count)
            .map(|_| self.f64())
            .collect::<Result<Vec<_>, _>>()?;
        Tensor::new(shape, data).map_err(|_| CodecError::Tensor(at))
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}
