//! Binary training checkpoints.
//!
//! Layout: magic `NPCK`, format version, then named sections in fixed order
//! (`config`, `params`, `adam`, `trainer`, `best_params`). All integers and
//! floats are little-endian; tensors are stored row-major as f64. Load errors
//! always name the section they occurred in.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::ParamRegistry;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NPCK";
const VERSION: u32 = 1;
const SECTIONS: [&str; 5] = ["config", "params", "adam", "trainer", "best_params"];

/// Training-loop bookkeeping needed to resume a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub epoch: u64,
    pub best_ndcg: f64,
    pub epochs_since_improve: u64,
    /// Seed of the training RNG plus its current stream position, so a
    /// resumed run continues the same random sequence.
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

#[derive(Debug)]
pub struct Checkpoint {
    /// Resolved run configuration, serialized by the caller.
    pub config_json: String,
    /// Current parameters.
    pub params: ParamRegistry<f64>,
    pub adam_step: u64,
    pub adam_m: Vec<Tensor<f64>>,
    pub adam_v: Vec<Tensor<f64>>,
    pub trainer: TrainerState,
    /// Parameters at the best validation score so far.
    pub best_params: ParamRegistry<f64>,
}

fn fail(section: &str, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        section: section.to_string(),
        message: message.into(),
    }
}

struct SectionReader<'a, R: Read> {
    inner: &'a mut R,
    section: &'static str,
}

impl<R: Read> SectionReader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| fail(self.section, format!("truncated: {}", e)))?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| fail(self.section, "invalid utf-8 in name"))
    }

    fn tensor(&mut self) -> Result<Tensor<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let numel = rows
            .checked_mul(cols)
            .filter(|&n| n <= (1 << 32))
            .ok_or_else(|| fail(self.section, format!("implausible shape {}x{}", rows, cols)))?;
        let mut data = Vec::with_capacity(numel);
        let raw = self.bytes(numel * 8)?;
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        Tensor::new(vec![rows, cols], data)
    }

    fn header(&mut self) -> Result<u64> {
        let name = self.string()?;
        if name != self.section {
            return Err(fail(
                self.section,
                format!("expected section '{}', found '{}'", self.section, name),
            ));
        }
        self.u64()
    }
}

fn write_string(out: &mut impl Write, s: &str) -> Result<()> {
    out.write_all(&(s.len() as u16).to_le_bytes())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn write_tensor(out: &mut impl Write, t: &Tensor<f64>) -> Result<()> {
    out.write_all(&(t.rows() as u64).to_le_bytes())?;
    out.write_all(&(t.cols() as u64).to_le_bytes())?;
    for &v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn encode_params(params: &ParamRegistry<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        write_string(&mut buf, name)?;
        write_tensor(&mut buf, tensor)?;
    }
    Ok(buf)
}

fn decode_params(section: &'static str, payload: &[u8]) -> Result<ParamRegistry<f64>> {
    let mut cursor = payload;
    let mut r = SectionReader {
        inner: &mut cursor,
        section,
    };
    let count = r.u32()? as usize;
    let mut params = ParamRegistry::new();
    for _ in 0..count {
        let name = r.string()?;
        let tensor = r.tensor()?;
        params.insert(name, tensor);
    }
    Ok(params)
}

fn write_section(out: &mut impl Write, name: &str, payload: &[u8]) -> Result<()> {
    write_string(out, name)?;
    out.write_all(&(payload.len() as u64).to_le_bytes())?;
    out.write_all(payload)?;
    Ok(())
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;

        write_section(out, "config", self.config_json.as_bytes())?;
        write_section(out, "params", &encode_params(&self.params)?)?;

        let mut adam = Vec::new();
        adam.write_all(&self.adam_step.to_le_bytes())?;
        adam.write_all(&(self.adam_m.len() as u32).to_le_bytes())?;
        for t in self.adam_m.iter().chain(self.adam_v.iter()) {
            write_tensor(&mut adam, t)?;
        }
        write_section(out, "adam", &adam)?;

        let mut tr = Vec::new();
        tr.write_all(&self.trainer.epoch.to_le_bytes())?;
        tr.write_all(&self.trainer.best_ndcg.to_le_bytes())?;
        tr.write_all(&self.trainer.epochs_since_improve.to_le_bytes())?;
        tr.write_all(&self.trainer.rng_seed)?;
        tr.write_all(&self.trainer.rng_word_pos.to_le_bytes())?;
        write_section(out, "trainer", &tr)?;

        write_section(out, "best_params", &encode_params(&self.best_params)?)?;
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Checkpoint> {
        let mut head = SectionReader {
            inner: input,
            section: "header",
        };
        let magic = head.bytes(4)?;
        if magic != MAGIC {
            return Err(fail("header", "not a checkpoint file (bad magic)"));
        }
        let version = head.u32()?;
        if version != VERSION {
            return Err(fail(
                "header",
                format!("unsupported format version {} (expected {})", version, VERSION),
            ));
        }

        let mut payloads = Vec::with_capacity(SECTIONS.len());
        for section in SECTIONS {
            let mut r = SectionReader {
                inner: input,
                section,
            };
            let len = r.header()? as usize;
            payloads.push(r.bytes(len)?);
        }

        let config_json = String::from_utf8(payloads[0].clone())
            .map_err(|_| fail("config", "invalid utf-8"))?;
        let params = decode_params("params", &payloads[1])?;
        let best_params = decode_params("best_params", &payloads[4])?;

        let mut cursor = payloads[2].as_slice();
        let mut r = SectionReader {
            inner: &mut cursor,
            section: "adam",
        };
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;
        if count != params.len() {
            return Err(fail(
                "adam",
                format!("{} moment buffers for {} parameters", count, params.len()),
            ));
        }
        let mut adam_m = Vec::with_capacity(count);
        let mut adam_v = Vec::with_capacity(count);
        for _ in 0..count {
            adam_m.push(r.tensor()?);
        }
        for _ in 0..count {
            adam_v.push(r.tensor()?);
        }
        for (i, (m, v)) in adam_m.iter().zip(adam_v.iter()).enumerate() {
            let p = params.tensor_at(i);
            if m.rows() != p.rows() || m.cols() != p.cols() || v.rows() != p.rows() || v.cols() != p.cols() {
                return Err(fail(
                    "adam",
                    format!("moment shape mismatch for parameter '{}'", params.name_at(i)),
                ));
            }
        }

        let mut cursor = payloads[3].as_slice();
        let mut r = SectionReader {
            inner: &mut cursor,
            section: "trainer",
        };
        let epoch = r.u64()?;
        let best_ndcg = r.f64()?;
        let epochs_since_improve = r.u64()?;
        let rng_seed: [u8; 32] = r.bytes(32)?.try_into().unwrap();
        let rng_word_pos = r.u128()?;

        Ok(Checkpoint {
            config_json,
            params,
            adam_step,
            adam_m,
            adam_v,
            trainer: TrainerState {
                epoch,
                best_ndcg,
                epochs_since_improve,
                rng_seed,
                rng_word_pos,
            },
            best_params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamRegistry::new();
        params.insert("a".to_string(), Tensor::from_rows(&[vec![1.0, -2.5], vec![0.25, 1e-300]]));
        params.insert("b".to_string(), Tensor::from_rows(&[vec![f64::MIN_POSITIVE, 3.125]]));
        let adam_m = vec![Tensor::zeros(2, 2), Tensor::full(1, 2, 0.5)];
        let adam_v = vec![Tensor::full(2, 2, 0.125), Tensor::zeros(1, 2)];
        Checkpoint {
            config_json: "{\"lr\":0.0043}".to_string(),
            params: params.clone(),
            adam_step: 17,
            adam_m,
            adam_v,
            trainer: TrainerState {
                epoch: 4,
                best_ndcg: 0.37521,
                epochs_since_improve: 2,
                rng_seed: [7u8; 32],
                rng_word_pos: 123456789,
            },
            best_params: params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config_json, ck.config_json);
        assert_eq!(back.adam_step, ck.adam_step);
        assert_eq!(back.trainer, ck.trainer);
        for i in 0..ck.params.len() {
            assert_eq!(back.params.name_at(i), ck.params.name_at(i));
            assert_eq!(back.params.tensor_at(i), ck.params.tensor_at(i));
            assert_eq!(back.best_params.tensor_at(i), ck.best_params.tensor_at(i));
            assert_eq!(back.adam_m[i], ck.adam_m[i]);
            assert_eq!(back.adam_v[i], ck.adam_v[i]);
        }
        // Serialization itself is deterministic.
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = Checkpoint::read_from(&mut &b"XXXX\x01\x00\x00\x00"[..]).unwrap_err();
        assert!(err.to_string().contains("header"), "{}", err);
    }

    #[test]
    fn truncation_names_the_failing_section() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        // Cut inside the trainer section.
        let cut = buf.len() - 60;
        let err = Checkpoint::read_from(&mut &buf[..cut]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trainer") || msg.contains("best_params"), "{}", msg);
        assert!(msg.contains("truncated"), "{}", msg);
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf[4] = 9;
        let err = Checkpoint::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"), "{}", err);
    }

    #[test]
    fn adam_buffer_count_mismatch_is_rejected() {
        let mut ck = sample();
        ck.adam_m.pop();
        ck.adam_v.pop();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let err = Checkpoint::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("adam"), "{}", err);
    }
}
