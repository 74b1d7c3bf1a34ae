//! Checkpoint container ("HNNC"): versioned parameters, optional optimizer
//! moments, step counter and RNG seed, guarded by a network-spec digest.

use crate::err::{Error, Result};
use crate::fmt_io::*;
use crate::nn::adam::AdamState;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HNNC";

#[derive(Clone)]
pub struct Checkpoint {
    /// Digest of the owning network's spec; verified on load.
    pub digest: String,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState<f32>>,
    pub seed: u64,
    pub epoch: u32,
}

impl Checkpoint {
    pub fn new(digest: String, params: ParamStore<f32>, seed: u64) -> Self {
        Checkpoint {
            digest,
            params,
            adam: None,
            seed,
            epoch: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_magic(&mut w, MAGIC)?;
        write_str(&mut w, &self.digest)?;
        write_u32(&mut w, self.params.len() as u32)?;
        for (_, name, t) in self.params.iter() {
            write_str(&mut w, name)?;
            write_tensor(&mut w, t)?;
        }
        w.write_all(&[self.adam.is_some() as u8])?;
        if let Some(adam) = &self.adam {
            write_u64(&mut w, adam.step)?;
            for t in &adam.m {
                write_tensor(&mut w, t)?;
            }
            for t in &adam.v {
                write_tensor(&mut w, t)?;
            }
        }
        write_u64(&mut w, self.seed)?;
        write_u32(&mut w, self.epoch)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        read_magic(&mut r, MAGIC)?;
        let digest = read_str(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = read_str(&mut r)?;
            let t = read_tensor(&mut r)?;
            params.add(name, t);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let adam = if flag[0] != 0 {
            let step = read_u64(&mut r)?;
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                m.push(read_tensor(&mut r)?);
            }
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(read_tensor(&mut r)?);
            }
            Some(AdamState { step, m, v })
        } else {
            None
        };
        let seed = read_u64(&mut r)?;
        let epoch = read_u32(&mut r)?;
        Ok(Checkpoint {
            digest,
            params,
            adam,
            seed,
            epoch,
        })
    }

    /// Digest guard: a checkpoint may only be bound to the spec it was trained with.
    pub fn verify_digest(&self, expected: &str) -> Result<()> {
        if self.digest != expected {
            return Err(Error::DigestMismatch {
                expected: expected.to_string(),
                found: self.digest.clone(),
            });
        }
        Ok(())
    }

    /// Digest over parameter payloads (not the spec digest): used by tests to
    /// assert that training stages leave parameter subsets untouched.
    pub fn params_digest(&self) -> String {
        let mut bytes = Vec::new();
        for (_, name, t) in self.params.iter() {
            bytes.extend_from_slice(name.as_bytes());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor<f32>) -> Result<()> {
    w.write_all(&[t.shape().len() as u8])?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    write_f32_slice(w, t.data())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor<f32>> {
    let mut nd = [0u8; 1];
    r.read_exact(&mut nd)?;
    let mut shape = Vec::with_capacity(nd[0] as usize);
    for _ in 0..nd[0] {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let data = read_f32_vec(r, n)?;
    Ok(Tensor::new(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn roundtrip_bit_exact() {
        let mut params = ParamStore::<f32>::new();
        let mut rng = rng_for(3, "ckpt");
        params.add(
            "layer.w",
            crate::nn::params::he_uniform(&mut rng, vec![4, 3], 4),
        );
        params.add("layer.b", Tensor::zeros(vec![3]));
        let mut ck = Checkpoint::new("digest123".into(), params.clone(), 77);
        let mut adam = AdamState::new(&params);
        adam.step = 12;
        ck.adam = Some(adam);
        ck.epoch = 4;

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.hnnc");
        ck.save(&p).unwrap();
        let ck2 = Checkpoint::load(&p).unwrap();
        assert_eq!(ck2.digest, "digest123");
        assert_eq!(ck2.seed, 77);
        assert_eq!(ck2.epoch, 4);
        assert_eq!(ck2.adam.as_ref().unwrap().step, 12);
        assert_eq!(ck.params_digest(), ck2.params_digest());

        // write -> read -> write byte equality
        let p2 = dir.path().join("y.hnnc");
        ck2.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn digest_mismatch_rejected() {
        let params = ParamStore::<f32>::new();
        let ck = Checkpoint::new("aaa".into(), params, 0);
        assert!(matches!(
            ck.verify_digest("bbb"),
            Err(Error::DigestMismatch { .. })
        ));
    }
}
