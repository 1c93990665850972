//! Versioned binary checkpoint container.
//!
//! A checkpoint is a flat map from section names to typed payloads
//! (f64 tensors with shapes, u64 arrays, or strings). Floats are stored as
//! little-endian IEEE 754 bit patterns, so save/load round-trips are
//! bit-exact. Network parameters, optimizer moments, normalizer state, RNG
//! position, and (for off-policy training) the replay buffer all live in
//! one file, which is what makes resumed training continue the exact
//! trajectory of an uninterrupted run.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::mlp::{MlpParams, MlpSpec, OutputActivation};
use super::optimizer::AdamState;
use super::normalizer::RunningNormalizer;

const MAGIC: &[u8; 8] = b"SDCKPT\x01\x00";

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U64(Vec<u64>),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: BTreeMap<String, Section>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_f64(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.sections.insert(name.into(), Section::F64 { shape, data });
    }

    pub fn insert_u64(&mut self, name: &str, data: Vec<u64>) {
        self.sections.insert(name.into(), Section::U64(data));
    }

    pub fn insert_text(&mut self, name: &str, text: &str) {
        self.sections.insert(name.into(), Section::Text(text.into()));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    fn missing(name: &str) -> Error {
        Error::Checkpoint(format!("missing section '{name}'"))
    }

    pub fn f64_section(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.sections.get(name) {
            Some(Section::F64 { shape, data }) => Ok((shape, data)),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not f64"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn u64_section(&self, name: &str) -> Result<&[u64]> {
        match self.sections.get(name) {
            Some(Section::U64(data)) => Ok(data),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not u64"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn text_section(&self, name: &str) -> Result<&str> {
        match self.sections.get(name) {
            Some(Section::Text(t)) => Ok(t),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not text"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn scalar_u64(&self, name: &str) -> Result<u64> {
        let data = self.u64_section(name)?;
        if data.len() != 1 {
            return Err(Error::Checkpoint(format!("section '{name}' is not a scalar")));
        }
        Ok(data[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            match section {
                Section::F64 { shape, data } => {
                    out.push(0);
                    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                    for d in shape {
                        out.extend_from_slice(&(*d as u64).to_le_bytes());
                    }
                    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
                    for x in data {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Section::U64(data) => {
                    out.push(1);
                    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
                    for x in data {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Section::Text(text) => {
                    out.push(2);
                    let bytes = text.as_bytes();
                    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
                    out.extend_from_slice(bytes);
                }
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = Cursor { bytes: &bytes, pos: 0 };
        let magic = cursor.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic / unsupported version".into()));
        }
        let count = cursor.u32()? as usize;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let name_len = cursor.u16()? as usize;
            let name = String::from_utf8(cursor.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("section name is not utf-8".into()))?;
            let kind = cursor.take(1)?[0];
            let section = match kind {
                0 => {
                    let ndims = cursor.u32()? as usize;
                    let mut shape = Vec::with_capacity(ndims);
                    for _ in 0..ndims {
                        shape.push(cursor.u64()? as usize);
                    }
                    let len = cursor.u64()? as usize;
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
                    }
                    if shape.iter().product::<usize>() != data.len() {
                        return Err(Error::Checkpoint(format!(
                            "section '{name}' shape disagrees with payload"
                        )));
                    }
                    Section::F64 { shape, data }
                }
                1 => {
                    let len = cursor.u64()? as usize;
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(cursor.u64()?);
                    }
                    Section::U64(data)
                }
                2 => {
                    let len = cursor.u64()? as usize;
                    let text = String::from_utf8(cursor.take(len)?.to_vec())
                        .map_err(|_| Error::Checkpoint("text section is not utf-8".into()))?;
                    Section::Text(text)
                }
                other => {
                    return Err(Error::Checkpoint(format!("unknown section kind {other}")))
                }
            };
            sections.insert(name, section);
        }
        Ok(Self { sections })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn output_tag(output: OutputActivation) -> Vec<u64> {
    match output {
        OutputActivation::Linear => vec![0, 0],
        OutputActivation::LinearSoftplus { linear } => vec![1, linear as u64],
    }
}

fn output_from_tag(tag: &[u64]) -> Result<OutputActivation> {
    match tag {
        [0, _] => Ok(OutputActivation::Linear),
        [1, linear] => Ok(OutputActivation::LinearSoftplus { linear: *linear as usize }),
        _ => Err(Error::Checkpoint("bad output activation tag".into())),
    }
}

/// Writes a network's spec and parameters under `prefix`.
pub fn store_mlp(ck: &mut Checkpoint, prefix: &str, params: &MlpParams) {
    ck.insert_u64(
        &format!("{prefix}/sizes"),
        params.spec.sizes.iter().map(|&s| s as u64).collect(),
    );
    ck.insert_u64(&format!("{prefix}/output"), output_tag(params.spec.output));
    for (l, (w, b)) in params.weights.iter().zip(params.biases.iter()).enumerate() {
        ck.insert_f64(
            &format!("{prefix}/w{l}"),
            vec![w.nrows(), w.ncols()],
            w.transpose().as_slice().to_vec(), // row-major on disk
        );
        ck.insert_f64(&format!("{prefix}/b{l}"), vec![b.len()], b.as_slice().to_vec());
    }
}

/// Reads a network stored by [`store_mlp`].
pub fn load_mlp(ck: &Checkpoint, prefix: &str) -> Result<MlpParams> {
    let sizes: Vec<usize> = ck
        .u64_section(&format!("{prefix}/sizes"))?
        .iter()
        .map(|&s| s as usize)
        .collect();
    let output = output_from_tag(ck.u64_section(&format!("{prefix}/output"))?)?;
    let spec = MlpSpec::new(sizes, output)?;
    let mut weights = Vec::with_capacity(spec.layer_count());
    let mut biases = Vec::with_capacity(spec.layer_count());
    for l in 0..spec.layer_count() {
        let (shape, data) = ck.f64_section(&format!("{prefix}/w{l}"))?;
        if shape != [spec.sizes[l + 1], spec.sizes[l]] {
            return Err(Error::Checkpoint(format!("layer {l} weight shape mismatch")));
        }
        weights.push(DMatrix::from_row_slice(shape[0], shape[1], data));
        let (bshape, bdata) = ck.f64_section(&format!("{prefix}/b{l}"))?;
        if bshape != [spec.sizes[l + 1]] {
            return Err(Error::Checkpoint(format!("layer {l} bias shape mismatch")));
        }
        biases.push(DVector::from_column_slice(bdata));
    }
    Ok(MlpParams { spec, weights, biases })
}

/// Writes optimizer moments under `prefix` (the step count and learning
/// rate ride along).
pub fn store_adam(ck: &mut Checkpoint, prefix: &str, adam: &AdamState) {
    ck.insert_u64(&format!("{prefix}/step"), vec![adam.step]);
    ck.insert_f64(&format!("{prefix}/lr"), vec![1], vec![adam.lr]);
    let (m, v) = adam.moments();
    for (tag, g) in [("m", m), ("v", v)] {
        for (l, (w, b)) in g.d_weights.iter().zip(g.d_biases.iter()).enumerate() {
            ck.insert_f64(
                &format!("{prefix}/{tag}w{l}"),
                vec![w.nrows(), w.ncols()],
                w.transpose().as_slice().to_vec(),
            );
            ck.insert_f64(&format!("{prefix}/{tag}b{l}"), vec![b.len()], b.as_slice().to_vec());
        }
    }
}

/// Reads optimizer moments for a network of the given shape.
pub fn load_adam(ck: &Checkpoint, prefix: &str, params: &MlpParams) -> Result<AdamState> {
    let step = ck.scalar_u64(&format!("{prefix}/step"))?;
    let (_, lr) = ck.f64_section(&format!("{prefix}/lr"))?;
    let mut adam = AdamState::new(params, lr[0]);
    adam.step = step;
    {
        let (m, v) = adam.moments_mut();
        for (tag, g) in [("m", m), ("v", v)] {
            for l in 0..params.weights.len() {
                let (shape, data) = ck.f64_section(&format!("{prefix}/{tag}w{l}"))?;
                if shape != [params.weights[l].nrows(), params.weights[l].ncols()] {
                    return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
                }
                g.d_weights[l] = DMatrix::from_row_slice(shape[0], shape[1], data);
                let (_, bdata) = ck.f64_section(&format!("{prefix}/{tag}b{l}"))?;
                g.d_biases[l] = DVector::from_column_slice(bdata);
            }
        }
    }
    Ok(adam)
}

pub fn store_normalizer(ck: &mut Checkpoint, prefix: &str, norm: &RunningNormalizer) {
    let (count, mean, m2) = norm.raw();
    ck.insert_u64(&format!("{prefix}/count"), vec![count]);
    ck.insert_f64(&format!("{prefix}/mean"), vec![mean.len()], mean.as_slice().to_vec());
    ck.insert_f64(&format!("{prefix}/m2"), vec![m2.len()], m2.as_slice().to_vec());
}

pub fn load_normalizer(ck: &Checkpoint, prefix: &str) -> Result<RunningNormalizer> {
    let count = ck.scalar_u64(&format!("{prefix}/count"))?;
    let (_, mean) = ck.f64_section(&format!("{prefix}/mean"))?;
    let (_, m2) = ck.f64_section(&format!("{prefix}/m2"))?;
    if mean.len() != m2.len() {
        return Err(Error::Checkpoint("normalizer sections disagree".into()));
    }
    Ok(RunningNormalizer::from_raw(
        count,
        DVector::from_column_slice(mean),
        DVector::from_column_slice(m2),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn container_round_trip_is_bit_exact() {
        let mut ck = Checkpoint::new();
        // Include awkward bit patterns.
        let data = vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE, 1e300, -3.7e-300];
        ck.insert_f64("a/values", vec![2, 3], data.clone());
        ck.insert_u64("b", vec![u64::MAX, 0, 42]);
        ck.insert_text("meta", "hello\nworld");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, loaded);
        let (shape, values) = loaded.f64_section("a/values").unwrap();
        assert_eq!(shape, [2, 3]);
        for (a, b) in values.iter().zip(data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mlp_round_trip() {
        let spec = MlpSpec::new(vec![4, 8, 3], OutputActivation::LinearSoftplus { linear: 2 })
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpParams::init(spec, &mut rng);
        let mut ck = Checkpoint::new();
        store_mlp(&mut ck, "actor", &net);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        ck.save(&path).unwrap();
        let loaded = load_mlp(&Checkpoint::load(&path).unwrap(), "actor").unwrap();
        assert_eq!(net, loaded);
    }

    #[test]
    fn rejects_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
