//! Self-describing binary checkpoints.
//!
//! Layout (little-endian): magic, format version, scalar width, geometry,
//! frequency table, expert parameters, gate parameters, two length-prefixed
//! JSON blobs (run configuration and training history) and a trailing SHA-256
//! of everything before it. Parameters are always stored as `f64`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experts::{ExpertBank, ExpertKind, LinearExpert};
use crate::frequency::Frequency;
use crate::gating::GatingNetwork;
use crate::model::SuperLinear;
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 8] = b"SUPLINCK";
pub const EXPERT_MAGIC: &[u8; 8] = b"SLEXPRT1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A model plus the configuration and history that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub model: SuperLinear<T>,
    pub config: Value,
    pub history: Value,
}

/// A single stage-1 expert with its training history.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertFile<T> {
    pub expert: LinearExpert<T>,
    pub history: Value,
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn values<T: Scalar>(&mut self, vs: impl IntoIterator<Item = T>) {
        for v in vs {
            self.f64(v.as_f64());
        }
    }
    fn json(&mut self, v: &Value) -> Result<()> {
        let bytes = serde_json::to_vec(v)?;
        self.u64(bytes.len() as u64);
        self.buf.extend_from_slice(&bytes);
        Ok(())
    }
    fn header(&mut self, magic: &[u8; 8], scalar: u8) {
        self.buf.extend_from_slice(magic);
        self.u32(FORMAT_VERSION);
        self.u8(scalar);
    }
    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
    fn expert<T: Scalar>(&mut self, e: &LinearExpert<T>) {
        self.u8(kind_tag(e.kind));
        self.u8(e.frozen as u8);
        match e.frequency {
            Some(f) => {
                self.u8(1);
                self.u64(f.numer());
                self.u64(f.denom());
            }
            None => self.u8(0),
        }
        self.values(e.weight.iter().copied());
        self.values(e.bias.iter().copied());
    }
}

fn kind_tag(k: ExpertKind) -> u8 {
    match k {
        ExpertKind::Frequency => 0,
        ExpertKind::Complementary => 1,
        ExpertKind::Naive => 2,
        ExpertKind::Mean => 3,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<X>(&self, message: impl Into<String>) -> Result<X> {
        Err(Error::Integrity {
            offset: self.pos as u64,
            message: message.into(),
        })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!("unexpected end of data: need {n} bytes"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self, limit: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        if v as u128 > limit as u128 {
            self.pos = at;
            return self.fail(format!("{what} = {v} exceeds the remaining file size"));
        }
        Ok(v as usize)
    }
    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Integrity {
            offset: self.pos as u64,
            message: "parameter count overflows".into(),
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
    fn json(&mut self) -> Result<Value> {
        let n = self.usize(self.buf.len(), "json length")?;
        let at = self.pos;
        let bytes = self.take(n)?;
        serde_json::from_slice(bytes).map_err(|e| Error::Integrity {
            offset: at as u64,
            message: format!("invalid json: {e}"),
        })
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => {
                self.pos -= 1;
                self.fail(format!("invalid flag byte {v}"))
            }
        }
    }
    fn frequency(&mut self) -> Result<Frequency> {
        let at = self.pos;
        let (n, d) = (self.u64()?, self.u64()?);
        Frequency::new(n, d).or_else(|e| {
            self.pos = at;
            self.fail(format!("invalid frequency: {e}"))
        })
    }
    fn expert<T: Scalar>(&mut self, l: usize, h: usize) -> Result<LinearExpert<T>> {
        let at = self.pos;
        let kind = match self.u8()? {
            0 => ExpertKind::Frequency,
            1 => ExpertKind::Complementary,
            v => {
                self.pos = at;
                return self.fail(format!("invalid linear expert kind {v}"));
            }
        };
        let frozen = self.flag()?;
        let frequency = if self.flag()? { Some(self.frequency()?) } else { None };
        let weight = Array2::from_shape_vec((l, h), self.values(l * h)?).expect("sized read");
        let bias = Array1::from(self.values(h)?);
        Ok(LinearExpert {
            weight,
            bias,
            kind,
            frequency,
            frozen,
        })
    }
}

/// Checks magic, version and the trailing digest; returns a reader positioned
/// after the header and the stored scalar width.
fn open<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<(Reader<'a>, u8)> {
    let head = magic.len() + 5;
    if bytes.len() < head + DIGEST_LEN {
        return Err(Error::Integrity {
            offset: bytes.len() as u64,
            message: format!("file too short ({} bytes)", bytes.len()),
        });
    }
    if &bytes[..magic.len()] != magic {
        return Err(Error::Integrity {
            offset: 0,
            message: "bad magic bytes".into(),
        });
    }
    let mut r = Reader {
        buf: &bytes[..bytes.len() - DIGEST_LEN],
        pos: magic.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity {
            offset: body.len() as u64,
            message: "checksum mismatch (file is corrupt or truncated)".into(),
        });
    }
    let scalar = r.u8()?;
    if scalar != 4 && scalar != 8 {
        r.pos -= 1;
        return r.fail(format!("invalid scalar width {scalar}"));
    }
    Ok((r, scalar))
}

fn finish_read(r: &Reader<'_>) -> Result<()> {
    if r.pos != r.buf.len() {
        return r.fail(format!("{} trailing bytes", r.buf.len() - r.pos));
    }
    Ok(())
}

pub fn checkpoint_to_bytes<T: Scalar>(c: &Checkpoint<T>) -> Result<Vec<u8>> {
    let m = &c.model;
    let bank = &m.bank;
    let mut w = Writer::default();
    w.header(MODEL_MAGIC, T::BYTES);
    w.u64(bank.lookback as u64);
    w.u64(bank.horizon as u64);
    w.u64(m.gate.num_bins() as u64);
    w.u32(bank.frequency_experts.len() as u32);
    w.u32(bank.complementary_experts.len() as u32);
    w.u8(bank.include_naive as u8 | (bank.include_mean as u8) << 1);
    w.u32(m.gate.top_k as u32);
    w.f64(m.gate.noise_std.as_f64());
    for f in bank.frequencies().into_iter().flatten() {
        w.u64(f.numer());
        w.u64(f.denom());
    }
    for e in bank.linear_experts() {
        w.expert(e);
    }
    w.values(m.gate.weight.iter().copied());
    w.values(m.gate.bias.iter().copied());
    w.json(&c.config)?;
    w.json(&c.history)?;
    Ok(w.finish())
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (mut r, _) = open(bytes, MODEL_MAGIC)?;
    let limit = bytes.len();
    let l = r.usize(limit, "lookback")?;
    let h = r.usize(limit, "horizon")?;
    let bins = r.usize(limit, "periodogram bins")?;
    let nf = r.u32()? as usize;
    let nc = r.u32()? as usize;
    let at = r.pos;
    let flags = r.u8()?;
    if flags > 3 {
        r.pos = at;
        return r.fail(format!("invalid heuristic flags {flags}"));
    }
    let top_k = r.u32()? as usize;
    let noise = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let table = (0..nf).map(|_| r.frequency()).collect::<Result<Vec<_>>>()?;
    let mut freq = Vec::with_capacity(nf);
    for (i, f) in table.iter().enumerate() {
        let at = r.pos;
        let e = r.expert::<T>(l, h)?;
        if e.kind != ExpertKind::Frequency || e.frequency != Some(*f) {
            r.pos = at;
            return r.fail(format!("frequency expert {i} does not match the frequency table"));
        }
        freq.push(e);
    }
    let comp = (0..nc).map(|_| r.expert::<T>(l, h)).collect::<Result<Vec<_>>>()?;
    let n = nf + nc + (flags & 1) as usize + (flags >> 1) as usize;
    let gw = Array2::from_shape_vec((bins, n), r.values(bins * n)?).expect("sized read");
    let gb = Array1::from(r.values(n)?);
    let config = r.json()?;
    let history = r.json()?;
    finish_read(&r)?;
    let bank = ExpertBank::new(freq, comp, flags & 1 == 1, flags & 2 == 2, l, h)?;
    let gate = GatingNetwork::new(gw, gb, T::of(noise), top_k)?;
    Ok(Checkpoint {
        model: SuperLinear::new(bank, gate)?,
        config,
        history,
    })
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, c: &Checkpoint<T>) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(c)?)?;
    Ok(())
}

/// Reads and fully validates a checkpoint; nothing is returned on any error.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    checkpoint_from_bytes(&fs::read(path)?)
}

pub fn expert_to_bytes<T: Scalar>(f: &ExpertFile<T>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.header(EXPERT_MAGIC, T::BYTES);
    w.u64(f.expert.lookback() as u64);
    w.u64(f.expert.horizon() as u64);
    w.expert(&f.expert);
    w.json(&f.history)?;
    Ok(w.finish())
}

pub fn expert_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ExpertFile<T>> {
    let (mut r, _) = open(bytes, EXPERT_MAGIC)?;
    let l = r.usize(bytes.len(), "lookback")?;
    let h = r.usize(bytes.len(), "horizon")?;
    let expert = r.expert(l, h)?;
    let history = r.json()?;
    finish_read(&r)?;
    Ok(ExpertFile { expert, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint<f64> {
        let (l, h) = (6, 2);
        let mut e = LinearExpert::frequency(Frequency::per_period(3).unwrap(), l, h);
        e.weight = Array2::from_shape_fn((l, h), |(i, j)| (i as f64 - j as f64) / 7.0);
        e.frozen = true;
        let c = LinearExpert::complementary(Array2::from_elem((l, h), 0.1), Array1::from(vec![0.5, -0.5]));
        let bank = ExpertBank::new(vec![e], vec![c], true, true, l, h).unwrap();
        let gate = GatingNetwork::new(Array2::from_shape_fn((4, 4), |(i, j)| (i * j) as f64 / 3.0), Array1::zeros(4), 0.1, 2).unwrap();
        Checkpoint {
            model: SuperLinear::new(bank, gate).unwrap(),
            config: serde_json::json!({"seed": 3}),
            history: Value::Null,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = small();
        let bytes = checkpoint_to_bytes(&c).unwrap();
        let back: Checkpoint<f64> = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(checkpoint_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn damage_is_detected() {
        let bytes = checkpoint_to_bytes(&small()).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(checkpoint_from_bytes::<f64>(cut), Err(Error::Integrity { .. })));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(checkpoint_from_bytes::<f64>(&flipped), Err(Error::Integrity { .. })));
        let mut versioned = bytes.clone();
        versioned[8] = 9;
        assert!(matches!(
            checkpoint_from_bytes::<f64>(&versioned),
            Err(Error::Version { found: 9, expected: 1 })
        ));
        assert!(matches!(checkpoint_from_bytes::<f64>(b"short"), Err(Error::Integrity { .. })));
    }

    #[test]
    fn expert_file_round_trip() {
        let c = small();
        let f = ExpertFile {
            expert: c.model.bank.frequency_experts[0].clone(),
            history: serde_json::json!({"best_epoch": 2}),
        };
        let bytes = expert_to_bytes(&f).unwrap();
        assert_eq!(expert_from_bytes::<f64>(&bytes).unwrap(), f);
        assert!(expert_from_bytes::<f64>(&checkpoint_to_bytes(&c).unwrap()).is_err());
    }
}
