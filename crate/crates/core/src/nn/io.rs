//! `NNP1` binary parameter files.
//!
//! Layout (little endian): magic `NNP1`, `u32` layer count `n`, `n + 1`
//! `u32` layer sizes, `u32` output activation tag, then per layer the
//! row-major weight matrix followed by the bias vector as `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"NNP1";

pub fn to_bytes<S: Scalar>(net: &Mlp<S>) -> Vec<u8> {
    let sizes = net.sizes();
    let mut out = Vec::with_capacity(16 + 4 * sizes.len() + 8 * net.n_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&net.output.tag().to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.at.checked_add(n).ok_or("length overflow")?;
        let s = self
            .buf
            .get(self.at..end)
            .ok_or_else(|| format!("truncated at byte {}", self.at))?;
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<S: Scalar>(buf: &[u8]) -> std::result::Result<Mlp<S>, String> {
    let mut c = Cursor { buf, at: 0 };
    if c.take(4)? != MAGIC {
        return Err("bad magic (expected NNP1)".into());
    }
    let n = c.u32()? as usize;
    if n == 0 || n > 64 {
        return Err(format!("implausible layer count {n}"));
    }
    let sizes = (0..=n).map(|_| c.u32().map(|s| s as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
    if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
        return Err("implausible layer size".into());
    }
    let output = Activation::from_tag(c.u32()?).ok_or("unknown activation tag")?;
    let mut layers = Vec::with_capacity(n);
    for w in sizes.windows(2) {
        let mut l = Dense::zeros(w[0], w[1]);
        for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *v = S::of(c.f64()?);
        }
        layers.push(l);
    }
    if c.at != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - c.at));
    }
    Ok(Mlp { layers, output })
}

pub fn save_nnp<S: Scalar>(net: &Mlp<S>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_nnp<S: Scalar>(path: &Path) -> Result<Mlp<S>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf).map_err(|msg| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn header_layout() {
        let net = Mlp::<f64>::zeros(&[3, 2], Activation::Tanh);
        let b = to_bytes(&net);
        assert_eq!(&b[..4], b"NNP1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 1);
        assert_eq!(b.len(), 20 + 8 * 8);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let net = Mlp::<f64>::zeros(&[3, 2], Activation::Tanh);
        let b = to_bytes(&net);
        assert!(from_bytes::<f64>(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(from_bytes::<f64>(&bad).is_err());
        let mut long = b;
        long.push(0);
        assert!(from_bytes::<f64>(&long).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(seed in any::<u64>(), hidden in 1usize..6, inputs in 1usize..5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::<f64>::random(&[inputs, hidden, 2], Activation::Linear, 10.0, &mut rng);
            let back: Mlp<f64> = from_bytes(&to_bytes(&net)).unwrap();
            let a: Vec<u64> = net.params().iter().map(|p| p.to_bits()).collect();
            let b: Vec<u64> = back.params().iter().map(|p| p.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.sizes(), net.sizes());
            prop_assert_eq!(back.output, net.output);
        }
    }
}
