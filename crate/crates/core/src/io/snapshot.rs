//! Binary field snapshots: magic `PFCH1`, little-endian `u32` nx, ny and
//! field count, the length-prefixed UTF-8 names, then the `f64` data of each
//! field in row-major order.

use std::path::Path;

use crate::io::atomic_write;

pub const MAGIC: &[u8; 5] = b"PFCH1";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("snapshot is truncated")]
    Truncated,
    #[error("snapshot dimensions {nx}x{ny} with {fields} fields overflow")]
    Overflow { nx: u64, ny: u64, fields: u64 },
    #[error("field name is not valid UTF-8")]
    BadName,
    #[error("field '{name}' has {got} values, expected {expected}")]
    BadLength { name: String, got: usize, expected: usize },
    #[error("{0} trailing bytes after the last field")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny, fields: vec![] }
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) -> Result<(), SnapshotError> {
        let expected = self.nx * self.ny;
        if values.len() != expected {
            return Err(SnapshotError::BadLength { name: name.into(), got: values.len(), expected });
        }
        self.fields.push((name.into(), values));
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SnapshotError> {
        let as_u32 = |v: usize| {
            u32::try_from(v).map_err(|_| SnapshotError::Overflow {
                nx: self.nx as u64,
                ny: self.ny as u64,
                fields: self.fields.len() as u64,
            })
        };
        let cells = self.nx * self.ny;
        let mut out = Vec::with_capacity(17 + self.fields.len() * (cells * 8 + 16));
        out.extend_from_slice(MAGIC);
        for v in [self.nx, self.ny, self.fields.len()] {
            out.extend_from_slice(&as_u32(v)?.to_le_bytes());
        }
        for (name, _) in &self.fields {
            out.extend_from_slice(&as_u32(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for (name, v) in &self.fields {
            if v.len() != cells {
                return Err(SnapshotError::BadLength { name: name.clone(), got: v.len(), expected: cells });
            }
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5).map_err(|_| SnapshotError::BadMagic)? != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let (nx, ny, count) = (r.u32()? as u64, r.u32()? as u64, r.u32()? as u64);
        let overflow = SnapshotError::Overflow { nx, ny, fields: count };
        let cells = nx.checked_mul(ny).ok_or(overflow)?;
        let total = cells.checked_mul(8).and_then(|b| b.checked_mul(count));
        // data must fit in what is left of the file
        if total.map_or(true, |t| t > bytes.len() as u64) {
            return Err(if total.is_none() {
                SnapshotError::Overflow { nx, ny, fields: count }
            } else {
                SnapshotError::Truncated
            });
        }
        let mut names = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            names.push(String::from_utf8(raw.to_vec()).map_err(|_| SnapshotError::BadName)?);
        }
        let mut fields = Vec::with_capacity(names.len());
        for name in names {
            let raw = r.take(cells as usize * 8)?;
            let v = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            fields.push((name, v));
        }
        if r.pos != bytes.len() {
            return Err(SnapshotError::Trailing(bytes.len() - r.pos));
        }
        Ok(Self { nx: nx as usize, ny: ny as usize, fields })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(SnapshotError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte slice")))
    }
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), SnapshotError> {
    atomic_write(path, &snap.to_bytes()?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    Snapshot::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Snapshot {
        let mut s = Snapshot::new(3, 2);
        s.push("c_a", vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, f64::NAN]).unwrap();
        s.push("phi", vec![1.0; 6]).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = sample();
        let back = Snapshot::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back.fields.len(), 2);
        for ((na, va), (nb, vb)) in s.fields.iter().zip(&back.fields) {
            assert_eq!(na, nb);
            assert!(va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn layout() {
        let b = sample().to_bytes().unwrap();
        assert_eq!(&b[..5], b"PFCH1");
        assert_eq!(&b[5..17], &[3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[17..24], &[3, 0, 0, 0, b'c', b'_', b'a']);
        assert_eq!(b.len(), 17 + 7 + 7 + 2 * 6 * 8);
    }

    #[test]
    fn empty_field_list_is_valid() {
        let s = Snapshot::new(4, 4);
        let b = s.to_bytes().unwrap();
        assert_eq!(b.len(), 17);
        assert_eq!(Snapshot::from_bytes(&b).unwrap(), s);
    }

    #[test]
    fn rejects_corruption() {
        let mut b = sample().to_bytes().unwrap();
        assert!(matches!(Snapshot::from_bytes(&b[..b.len() - 1]), Err(SnapshotError::Truncated)));
        assert!(matches!(Snapshot::from_bytes(&b[..3]), Err(SnapshotError::BadMagic)));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(Snapshot::from_bytes(&extra), Err(SnapshotError::Trailing(1))));
        b[0] = b'X';
        assert!(matches!(Snapshot::from_bytes(&b), Err(SnapshotError::BadMagic)));
        // huge dimensions are refused before any allocation
        let mut big = b"PFCH1".to_vec();
        for v in [u32::MAX, u32::MAX, 3] {
            big.extend_from_slice(&v.to_le_bytes());
        }
        assert!(Snapshot::from_bytes(&big).is_err());
        let mut s = Snapshot::new(2, 2);
        assert!(s.push("x", vec![0.0; 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pfch");
        write_snapshot(&p, &sample()).unwrap();
        let back = read_snapshot(&p).unwrap();
        assert_eq!(back.to_bytes().unwrap(), sample().to_bytes().unwrap());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = Snapshot::from_bytes(&bytes);
        }

        #[test]
        fn arbitrary_snapshots_round_trip(nx in 1usize..5, ny in 1usize..5, seed in any::<u64>(), count in 0usize..4) {
            let mut s = Snapshot::new(nx, ny);
            let mut r = crate::io::init::Lcg::new(seed);
            for k in 0..count {
                s.push(&format!("f{k}"), (0..nx * ny).map(|_| f64::from_bits(r.next_u64())).collect()).unwrap();
            }
            let b = s.to_bytes().unwrap();
            prop_assert_eq!(Snapshot::from_bytes(&b).unwrap().to_bytes().unwrap(), b);
        }
    }
}
