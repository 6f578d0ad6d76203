//! The BRAS raster container.
//!
//! Layout: magic `BRAS`, one kind byte (0 = multi-band f32, 1 = labels u8,
//! 2 = mask u8), little-endian u32 `C`, `W`, `H`, then the band-sequential
//! payload. Label and mask files carry `C = 1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{AcquisitionMask, LabelRaster, MultiBandRaster};

const MAGIC: &[u8; 4] = b"BRAS";
const HEADER_LEN: usize = 4 + 1 + 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    MultiBand = 0,
    Labels = 1,
    Mask = 2,
}

impl Kind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Kind::MultiBand),
            1 => Ok(Kind::Labels),
            2 => Ok(Kind::Mask),
            other => Err(Error::Format(format!("unknown kind byte {other}"))),
        }
    }
}

/// A decoded BRAS file.
#[derive(Debug, Clone, PartialEq)]
pub enum Bras {
    MultiBand(MultiBandRaster),
    /// Label payload; the class count is not part of the format.
    Labels { width: usize, height: usize, labels: Vec<u8> },
    Mask(AcquisitionMask),
}

fn header(kind: Kind, c: usize, w: usize, h: usize, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.push(kind as u8);
    for d in [c, w, h] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

pub fn encode_multiband(r: &MultiBandRaster) -> Vec<u8> {
    let mut out = header(Kind::MultiBand, r.bands(), r.width(), r.height(), r.data().len() * 4);
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_labels(l: &LabelRaster) -> Vec<u8> {
    let mut out = header(Kind::Labels, 1, l.width(), l.height(), l.len());
    out.extend_from_slice(l.labels());
    out
}

pub fn encode_mask(m: &AcquisitionMask) -> Vec<u8> {
    let mut out = header(Kind::Mask, 1, m.width(), m.height(), m.bits().len());
    out.extend_from_slice(m.bits());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Bras> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let kind = Kind::from_byte(bytes[4])?;
    let dim = |k: usize| u32::from_le_bytes(bytes[5 + 4 * k..9 + 4 * k].try_into().unwrap()) as usize;
    let (c, w, h) = (dim(0), dim(1), dim(2));
    let elem = if kind == Kind::MultiBand { 4 } else { 1 };
    let expected = c
        .checked_mul(w)
        .and_then(|n| n.checked_mul(h))
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    if kind != Kind::MultiBand && c != 1 {
        return Err(Error::Format(format!("{kind:?} file must have C = 1, got {c}")));
    }
    match kind {
        Kind::MultiBand => {
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Ok(Bras::MultiBand(MultiBandRaster::from_vec(c, w, h, data)?))
        }
        Kind::Labels => Ok(Bras::Labels {
            width: w,
            height: h,
            labels: payload.to_vec(),
        }),
        Kind::Mask => Ok(Bras::Mask(AcquisitionMask::from_vec(w, h, payload.to_vec())?)),
    }
}

fn read(path: &Path) -> Result<Bras> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_multiband(path: &Path) -> Result<MultiBandRaster> {
    match read(path)? {
        Bras::MultiBand(r) => Ok(r),
        other => Err(Error::Format(format!("{}: expected multi-band, found {}", path.display(), kind_name(&other)))),
    }
}

pub fn read_labels(path: &Path, num_classes: usize) -> Result<LabelRaster> {
    match read(path)? {
        Bras::Labels { width, height, labels } => LabelRaster::from_vec(width, height, num_classes, labels),
        other => Err(Error::Format(format!("{}: expected labels, found {}", path.display(), kind_name(&other)))),
    }
}

pub fn read_mask(path: &Path) -> Result<AcquisitionMask> {
    match read(path)? {
        Bras::Mask(m) => Ok(m),
        other => Err(Error::Format(format!("{}: expected mask, found {}", path.display(), kind_name(&other)))),
    }
}

fn kind_name(b: &Bras) -> &'static str {
    match b {
        Bras::MultiBand(_) => "multi-band",
        Bras::Labels { .. } => "labels",
        Bras::Mask(_) => "mask",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_file_layout_is_exact() {
        let l = LabelRaster::from_rows(&[&[0, 1, 2], &[3, 2, 1]], 4).unwrap();
        let bytes = encode_labels(&l);
        let expected: Vec<u8> = [
            b"BRAS".as_slice(),
            &[1],
            &1u32.to_le_bytes(),
            &3u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            &[0, 1, 2, 3, 2, 1],
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn multiband_payload_is_little_endian_f32() {
        let r = MultiBandRaster::from_vec(2, 1, 1, vec![0.5, 0.25]).unwrap();
        let bytes = encode_multiband(&r);
        assert_eq!(bytes[4], 0);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[21..25], &0.25f32.to_le_bytes());
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let m = AcquisitionMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let mut bytes = encode_mask(&m);
        assert_eq!(decode(&bytes).unwrap(), Bras::Mask(m));
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode(truncated), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn label_reader_checks_class_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.bras");
        let l = LabelRaster::from_rows(&[&[0, 3]], 4).unwrap();
        write(&path, &encode_labels(&l)).unwrap();
        assert_eq!(read_labels(&path, 4).unwrap(), l);
        assert!(read_labels(&path, 3).is_err());
        assert!(read_multiband(&path).is_err());
    }

    proptest! {
        #[test]
        fn multiband_round_trip_is_bit_exact(c in 1usize..4, w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..c * w * h).map(|_| rng.gen::<f32>()).collect();
            let r = MultiBandRaster::from_vec(c, w, h, data).unwrap();
            prop_assert_eq!(decode(&encode_multiband(&r)).unwrap(), Bras::MultiBand(r));
        }
    }
}
