use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{InitMode, InitScheme, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VQALABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Flat binary model snapshot.
///
/// Layout (little-endian): magic, `u32` version, `u32` arch-tag length and
/// UTF-8 bytes, `u32` dim count and `u64` dims, `u8` init tag, `u64` seed,
/// `u32` tensor count, then per tensor a `u32` rank, `u64` extents and
/// `f64` values, in parameter declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub dims: Vec<u64>,
    pub init: InitMode,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_store(arch: impl Into<String>, dims: Vec<u64>, init: InitMode, store: &ParamStore) -> Self {
        Self {
            arch: arch.into(),
            dims,
            init,
            tensors: store.tensors().to_vec(),
        }
    }

    /// Loads the tensors into a store built for the same architecture.
    pub fn restore(&self, arch: &str, dims: &[u64], store: &mut ParamStore) -> Result<()> {
        if self.arch != arch || self.dims != dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for {} {:?}, model is {arch} {dims:?}",
                self.arch, self.dims
            )));
        }
        store.load_values(self.tensors.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_u32(&mut w, self.arch.len())?;
        w.write_all(self.arch.as_bytes())?;
        write_u32(&mut w, self.dims.len())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[self.init.scheme.tag()])?;
        w.write_all(&self.init.seed.to_le_bytes())?;
        write_u32(&mut w, self.tensors.len())?;
        for t in &self.tensors {
            write_u32(&mut w, t.shape().len())?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_len(&mut r, 1 << 16)?;
        let mut arch = vec![0u8; n];
        r.read_exact(&mut arch).map_err(truncated)?;
        let arch = String::from_utf8(arch).map_err(|_| Error::Checkpoint("arch tag is not UTF-8".into()))?;
        let n = read_len(&mut r, 1 << 16)?;
        let dims = (0..n).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(truncated)?;
        let scheme = InitScheme::from_tag(tag[0])
            .ok_or_else(|| Error::Checkpoint(format!("unknown init tag {}", tag[0])))?;
        let seed = read_u64(&mut r)?;
        let count = read_len(&mut r, 1 << 20)?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = read_len(&mut r, 8)?;
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&l| l <= 1 << 28)
                .ok_or_else(|| Error::Checkpoint(format!("implausible tensor shape {shape:?}")))?;
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf).map_err(truncated)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            arch,
            dims,
            init: InitMode::new(scheme, seed),
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint("length overflows u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R, max: usize) -> Result<usize> {
    let n = read_u32(r)? as usize;
    if n > max {
        return Err(Error::Checkpoint(format!("length {n} exceeds {max}")));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            arch: "gan/full/N2".into(),
            dims: vec![64, 32, 16],
            init: InitMode::new(InitScheme::I2, 99),
            tensors: vec![
                Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]).unwrap(),
                Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.arch, c.arch);
        assert_eq!(back.dims, c.dims);
        assert_eq!(back.init, c.init);
        for (a, b) in back.tensors.iter().zip(&c.tensors) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncation_and_magic_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        for cut in [3, 12, buf.len() - 1] {
            assert!(matches!(
                Checkpoint::read_from(&buf[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
        buf[0] = b'X';
        assert!(matches!(Checkpoint::read_from(buf.as_slice()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn restore_checks_arch() {
        let c = sample();
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(vec![2, 3]));
        store.add("b", Tensor::zeros(vec![3]));
        assert!(c.restore("other", &c.dims, &mut store).is_err());
        c.restore("gan/full/N2", &[64, 32, 16], &mut store).unwrap();
        assert_eq!(store.tensors(), c.tensors.as_slice());
    }
}
