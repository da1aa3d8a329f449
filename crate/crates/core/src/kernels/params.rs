use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use super::{KernelError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

pub type Gradients = BTreeMap<String, Tensor>;

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

const MAGIC: &[u8; 4] = b"RSPS";
const VERSION: u32 = 1;

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<(), KernelError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(KernelError::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter, KernelError> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| KernelError::UnknownParameter(name.to_owned()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, KernelError> {
        Ok(&self.get(name)?.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter, KernelError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(KernelError::UnknownParameter(name.to_owned())),
        }
    }

    /// Replaces a tensor's values, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: &[f64]) -> Result<(), KernelError> {
        let p = self.get_mut(name)?;
        if values.len() != p.tensor.len() {
            return Err(KernelError::Shape(format!("{name}: {} values for {:?}", values.len(), p.tensor.shape())));
        }
        p.tensor.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_names(&self) -> BTreeSet<String> {
        self.params.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect()
    }

    /// Marks exactly the parameters in `names` as trainable.
    pub fn set_trainable(&mut self, names: &BTreeSet<String>) -> Result<(), KernelError> {
        if let Some(n) = names.iter().find(|n| !self.contains(n)) {
            return Err(KernelError::UnknownParameter(n.clone()));
        }
        for p in &mut self.params {
            p.trainable = names.contains(&p.name);
        }
        Ok(())
    }

    /// Binary container, little-endian throughout:
    /// `"RSPS" | u32 version | u32 count`, then per parameter
    /// `u32 name_len | name (UTF-8) | u32 ndim | u64 dims... | u8 trainable | f64 values...`.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            let shape = p.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            w.write_all(&[u8::from(p.trainable)])?;
            for v in p.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, KernelError> {
        fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], KernelError> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| KernelError::Format(e.to_string()))?;
            Ok(b)
        }
        let u32_of = |r: &mut dyn Read| -> Result<u32, KernelError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| KernelError::Format(e.to_string()))?;
            Ok(u32::from_le_bytes(b))
        };
        if &take::<4>(r)? != MAGIC {
            return Err(KernelError::Format("bad magic".into()));
        }
        let version = u32_of(r)?;
        if version != VERSION {
            return Err(KernelError::Format(format!("unsupported version {version}")));
        }
        let count = u32_of(r)?;
        let mut store = Self::new();
        for _ in 0..count {
            let len = u32_of(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| KernelError::Format(e.to_string()))?;
            let name = String::from_utf8(name).map_err(|e| KernelError::Format(e.to_string()))?;
            let ndim = u32_of(r)? as usize;
            let shape = (0..ndim)
                .map(|_| take::<8>(r).map(|b| u64::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let trainable = match take::<1>(r)?[0] {
                0 => false,
                1 => true,
                b => return Err(KernelError::Format(format!("bad trainable flag {b}"))),
            };
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| take::<8>(r).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>, _>>()?;
            store.insert(name, Tensor::new(shape, values)?, trainable)?;
        }
        Ok(store)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, KernelError> {
        let store = Self::read_from(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(KernelError::Format(format!("{} trailing bytes", bytes.len())));
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    AlignmentPretrain = 1,
    CrossModal = 2,
    InstructionTuning = 3,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Stage {
    type Error = KernelError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Stage::AlignmentPretrain),
            2 => Ok(Stage::CrossModal),
            3 => Ok(Stage::InstructionTuning),
            other => Err(KernelError::UnknownStage(other)),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Which parameter names a stage may update, by naming convention:
/// stage 1 trains the visual projection; stage 2 adds the attention
/// projections (weights and biases) and every RMSNorm scale; stage 3 trains
/// only the bias-tune `alpha`/`beta` vectors.
pub fn is_trainable_in(stage: Stage, name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    let projection = name.starts_with("projection.");
    let attn_proj = name.contains(".attn.") && (leaf == "weight" || leaf == "bias");
    match stage {
        Stage::AlignmentPretrain => projection,
        Stage::CrossModal => projection || attn_proj || leaf == "gamma",
        Stage::InstructionTuning => leaf == "alpha" || leaf == "beta",
    }
}

pub fn stage_trainable_set<'a>(stage: Stage, names: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    names.into_iter().filter(|n| is_trainable_in(stage, n)).map(str::to_owned).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut s = ParameterStore::new();
        s.insert("a.weight", Tensor::from_fn(&[2, 3], |i| i as f64 * -0.25), true).unwrap();
        s.insert("b.gamma", Tensor::vector(vec![1.0, f64::MIN_POSITIVE]), false).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"RSPS");
        assert_eq!(ParameterStore::from_bytes(&bytes).unwrap(), s);
        assert!(ParameterStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(s.insert("a.weight", Tensor::vector(vec![0.0]), false).is_err());
    }

    #[test]
    fn stage_rules() {
        assert!(is_trainable_in(Stage::CrossModal, "blocks.0.attn.q.weight"));
        assert!(is_trainable_in(Stage::CrossModal, "final_norm.gamma"));
        assert!(!is_trainable_in(Stage::CrossModal, "blocks.0.ffn.gate.weight"));
        assert!(!is_trainable_in(Stage::CrossModal, "blocks.0.attn.q.alpha"));
        assert!(is_trainable_in(Stage::InstructionTuning, "blocks.1.ffn.down.beta"));
        assert!(!is_trainable_in(Stage::InstructionTuning, "blocks.1.attn.q.weight"));
        assert!(!is_trainable_in(Stage::InstructionTuning, "projection.weight"));
        assert!(Stage::try_from(4).is_err());
    }
}
