//! Shared framing for the binary file formats: a four-byte ASCII magic, a
//! little-endian `u32` JSON header length, the JSON header, a payload, and a
//! trailing CRC-32 (reflected polynomial 0xEDB88320) over every preceding byte.

use crate::error::{Error, Result};

pub(crate) fn encode(magic: &[u8; 4], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks magic and checksum, returning `(header_json, payload)`.
pub(crate) fn decode<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Corruption(format!(
            "file is {} bytes, shorter than the magic",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    if bytes.len() < 12 {
        return Err(Error::Corruption("truncated header".into()));
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..body_len]);
    if stored != actual {
        return Err(Error::Corruption(format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if 8 + header_len > body_len {
        return Err(Error::Corruption("header length exceeds file size".into()));
    }
    Ok((&bytes[8..8 + header_len], &bytes[8 + header_len..body_len]))
}

/// Little-endian cursor over a payload slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corruption(format!(
                "payload ends at byte {} but {} more were expected",
                self.buf.len(),
                self.pos + n - self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after the last entry",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc_matches_reference_check_value() {
        // The standard CRC-32 check value for "123456789".
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn round_trip_and_corruption() {
        let bytes = encode(b"TEST", b"{}", &[1, 2, 3]);
        let (h, p) = decode(b"TEST", &bytes).unwrap();
        assert_eq!(h, b"{}");
        assert_eq!(p, &[1, 2, 3]);

        let mut bad = bytes.clone();
        bad[9] ^= 0xff;
        assert!(matches!(decode(b"TEST", &bad), Err(Error::Corruption(_))));
        assert!(matches!(decode(b"NOPE", &bytes), Err(Error::Format(_))));
        assert!(matches!(
            decode(b"TEST", &bytes[..bytes.len() - 2]),
            Err(Error::Corruption(_))
        ));
    }
}
