//! Named parameter registry with frozen/trainable flags.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    /// Dotted path, e.g. `twe.stage1.expert3.wc1`.
    pub name: String,
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// How a new parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Truncated normal with [`INIT_STD`].
    Weight,
    Zeros,
    Ones,
    Const(f64),
}

/// Parameters in registration order. Registration order is the checkpoint
/// order, so it is part of the on-disk contract.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
    seed: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a parameter initialized from the stream named after it.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, frozen: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter `{name}`");
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Weight => {
                let mut r = Rng::new(self.seed).split(name);
                (0..n).map(|_| T::from_f64c(r.trunc_normal(INIT_STD))).collect()
            }
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Const(c) => vec![T::from_f64c(c); n],
        };
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor: Tensor::from_parts(shape.to_vec(), data),
            frozen,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Overwrites a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.tensor.shape() != value.shape() {
            return Err(Error::Config(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.tensor.shape(),
                value.shape()
            )));
        }
        p.tensor = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    /// `(frozen, trainable)` scalar counts.
    pub fn counts(&self) -> (u64, u64) {
        self.params.iter().fold((0, 0), |(f, t), p| {
            let n = p.tensor.len() as u64;
            if p.frozen {
                (f + n, t)
            } else {
                (f, t + n)
            }
        })
    }

    /// `(name, tensor)` pairs, optionally filtered by frozen flag.
    pub fn named_tensors(&self, frozen: Option<bool>) -> Vec<(&str, &Tensor<T>)> {
        self.params
            .iter()
            .filter(|p| frozen.is_none_or(|f| p.frozen == f))
            .map(|p| (p.name.as_str(), &p.tensor))
            .collect()
    }
}

/// Parameter count summary.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ParamCounts {
    pub frozen: u64,
    pub trainable: u64,
    pub fraction: f64,
}

pub fn count_params<T: Scalar>(store: &ParamStore<T>) -> ParamCounts {
    let (frozen, trainable) = store.counts();
    let total = frozen + trainable;
    ParamCounts {
        frozen,
        trainable,
        fraction: if total == 0 { 0.0 } else { trainable as f64 / total as f64 },
    }
}
