//! Binary tensor snapshot: `"CSEG"`, version `u32`, rank `u32`, one `u32` per
//! dim, then the values as little-endian `f32` in row-major order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSEG";
pub const VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// `read_exact` that reports truncation as a format error.
pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of file".into())
        } else {
            Error::Io(e)
        }
    })
}

pub fn write_snapshot<W: Write, T: Scalar>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, t.dims().len() as u32)?;
    for &d in t.dims() {
        write_u32(w, d as u32)?;
    }
    for v in t.data() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read, T: Scalar>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::of_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(dims, data)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_snapshot(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::<f32>::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &t).unwrap();
        let mut want = b"CSEG".to_vec();
        for v in [1u32, 2, 1, 2] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn truncated_and_foreign_input_rejected() {
        let t = Tensor::<f32>::ones(vec![3, 3]).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &t).unwrap();
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(
            read_snapshot::<_, f32>(&mut &cut[..]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_snapshot::<_, f32>(&mut &bad[..]).is_err());
        let mut newer = buf.clone();
        newer[4] = 9;
        assert!(matches!(
            read_snapshot::<_, f32>(&mut &newer[..]),
            Err(Error::Version { found: 9, .. })
        ));
    }

    proptest! {
        #[test]
        fn f32_roundtrip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f32>::randn(dims, 10.0, &mut rng).unwrap();
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &t).unwrap();
            let back: Tensor<f32> = read_snapshot(&mut &buf[..]).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
