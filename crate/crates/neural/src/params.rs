//! Named parameter storage and the checkpoint format.
//!
//! A checkpoint is a version line, a count line, one `name dim dim ...` line per
//! tensor, a `data` line, then every tensor's values as little-endian `f64` in
//! manifest order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::array::Array;
use crate::NeuralError;

pub const CHECKPOINT_VERSION: &str = "gridex-params v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Array>,
    lookup: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array) -> Result<ParamId, NeuralError> {
        if self.lookup.contains_key(name) {
            return Err(NeuralError::Checkpoint(format!("duplicate parameter {name:?}")));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(NeuralError::Checkpoint(format!("bad parameter name {name:?}")));
        }
        self.lookup.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.names.len() - 1))
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) initialization.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<ParamId, NeuralError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Array::new(shape, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, NeuralError> {
        self.add(name, Array::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Array::is_finite)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), NeuralError> {
        writeln!(w, "{CHECKPOINT_VERSION}")?;
        writeln!(w, "{}", self.names.len())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            let dims: Vec<String> = value.shape().iter().map(usize::to_string).collect();
            writeln!(w, "{name} {}", dims.join(" "))?;
        }
        writeln!(w, "data")?;
        for value in &self.values {
            for v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self, NeuralError> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<_>| -> Result<String, NeuralError> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(NeuralError::Checkpoint("truncated manifest".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let version = next_line(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {version:?}")));
        }
        let count: usize = next_line(&mut r)?
            .parse()
            .map_err(|_| NeuralError::Checkpoint("bad tensor count".into()))?;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let entry = next_line(&mut r)?;
            let mut parts = entry.split(' ');
            let name = parts.next().unwrap_or_default().to_string();
            let shape: Vec<usize> = parts
                .map(|d| d.parse().map_err(|_| NeuralError::Checkpoint(format!("bad shape in {entry:?}"))))
                .collect::<Result<_, _>>()?;
            manifest.push((name, shape));
        }
        if next_line(&mut r)? != "data" {
            return Err(NeuralError::Checkpoint("missing data marker".into()));
        }
        let mut out = ParameterSet::new();
        let mut buf = [0u8; 8];
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| NeuralError::Checkpoint(format!("truncated data for {name}")))?;
                data.push(f64::from_le_bytes(buf));
            }
            out.add(&name, Array::new(&shape, data)?)?;
        }
        if r.read(&mut buf)? != 0 {
            return Err(NeuralError::Checkpoint("trailing bytes after data".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn assign_from(&mut self, other: &ParameterSet) -> Result<(), NeuralError> {
        if self.names != other.names {
            return Err(NeuralError::Checkpoint("parameter names differ".into()));
        }
        for (mine, theirs) in self.values.iter().zip(&other.values) {
            if mine.shape() != theirs.shape() {
                return Err(NeuralError::Checkpoint("parameter shapes differ".into()));
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::new();
        ps.add_uniform("enc.w", &[3, 4], 3, &mut rng).unwrap();
        ps.add_zeros("enc.b", &[4]).unwrap();
        ps.add("scalar", Array::scalar(-0.0)).unwrap();
        ps
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let ps = sample();
        let mut bytes = Vec::new();
        ps.write_to(&mut bytes).unwrap();
        let back = ParameterSet::read_from(&bytes[..]).unwrap();
        assert_eq!(back.names, ps.names);
        for (a, b) in back.values.iter().zip(&ps.values) {
            assert_eq!(a.shape(), b.shape());
            let abits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
        let text = String::from_utf8_lossy(&bytes[..40]);
        assert!(text.starts_with("gridex-params v1\n3\nenc.w 3 4\n"));
    }

    #[test]
    fn rejects_bad_checkpoints() {
        let ps = sample();
        let mut bytes = Vec::new();
        ps.write_to(&mut bytes).unwrap();
        assert!(ParameterSet::read_from(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ParameterSet::read_from(&extra[..]).is_err());
        assert!(ParameterSet::read_from(&b"other v9\n"[..]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = sample();
        assert!(ps.add("enc.b", Array::scalar(1.0)).is_err());
        assert_eq!(ps.id("enc.b").map(ParamId::index), Some(1));
        assert_eq!(ps.numel(), 17);
    }
}
