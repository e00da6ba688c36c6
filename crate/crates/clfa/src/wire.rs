//! Little-endian cursor over a byte slice.

use crate::error::FormatError;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.bytes(N, what)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        self.array(what).map(u32::from_le_bytes)
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        self.array(what).map(u64::from_le_bytes)
    }

    fn counted(&self, n: usize, size: usize, what: &'static str) -> Result<(), FormatError> {
        match n.checked_mul(size) {
            Some(total) if total <= self.remaining() => Ok(()),
            _ => Err(FormatError::Truncated(what)),
        }
    }

    pub fn u32s(&mut self, n: usize, what: &'static str) -> Result<Vec<u32>, FormatError> {
        self.counted(n, 4, what)?;
        (0..n).map(|_| self.u32(what)).collect()
    }

    pub fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, FormatError> {
        self.counted(n, 4, what)?;
        (0..n).map(|_| self.array(what).map(f32::from_le_bytes)).collect()
    }

    pub fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        self.counted(n, 8, what)?;
        (0..n).map(|_| self.array(what).map(f64::from_le_bytes)).collect()
    }
}
