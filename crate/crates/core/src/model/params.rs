//! Named, seeded parameter storage.
//!
//! Trainable tensors live in one [`VarMap`] (what the optimizer sees) and
//! batch-norm running statistics in another, so checkpoints can hold both
//! while the optimizer only updates the former.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::VarMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, streams};

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Const(f64),
    /// Kaiming normal with fan-out, for ReLU networks.
    KaimingFanOut,
    /// Uniform in `±1/sqrt(fan_in)`.
    UniformFanIn(usize),
}

#[derive(Clone)]
pub struct ParamStore {
    params: VarMap,
    buffers: VarMap,
    rng: Arc<Mutex<ChaCha8Rng>>,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.param_names())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: VarMap::new(),
            buffers: VarMap::new(),
            rng: Arc::new(Mutex::new(stream(seed, &[streams::INIT]))),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    fn sample(&self, shape: &[usize], init: Init) -> Vec<f32> {
        let n: usize = shape.iter().product();
        let mut rng = self.rng.lock().expect("init rng poisoned");
        match init {
            Init::Const(c) => vec![c as f32; n],
            Init::KaimingFanOut => {
                let fan_out = shape[0] * shape[2..].iter().product::<usize>();
                let std = (2.0 / fan_out as f64).sqrt();
                (0..n).map(|_| (std * normal(&mut *rng)) as f32).collect()
            }
            Init::UniformFanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
            }
        }
    }

    fn insert(&self, map: &VarMap, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut data = map.data().lock().expect("varmap poisoned");
        if data.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        let values = self.sample(shape, init);
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        let t = var.as_tensor().clone();
        data.insert(name, var);
        Ok(t)
    }

    pub fn all_trainable(&self) -> Vec<Var> {
        let data = self.params.data().lock().expect("varmap poisoned");
        let mut named: Vec<_> = data.iter().collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.params.data().lock().expect("varmap poisoned").keys().cloned().collect();
        names.sort();
        names
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .data()
            .lock()
            .expect("varmap poisoned")
            .values()
            .map(|v| v.elem_count())
            .sum()
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_count_under(&self, prefix: &str) -> usize {
        self.params
            .data()
            .lock()
            .expect("varmap poisoned")
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Snapshot of every parameter and buffer, by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for map in [&self.params, &self.buffers] {
            for (k, v) in map.data().lock().expect("varmap poisoned").iter() {
                out.insert(k.clone(), v.as_tensor().copy()?.detach());
            }
        }
        Ok(out)
    }

    /// Overwrites every stored tensor from `values`; names and shapes must match exactly.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut seen = 0;
        for map in [&self.params, &self.buffers] {
            for (k, v) in map.data().lock().expect("varmap poisoned").iter() {
                let src = values
                    .get(k)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {k}")))?;
                if src.dims() != v.dims() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {k}: stored {:?}, model {:?}",
                        src.dims(),
                        v.dims()
                    )));
                }
                v.set(&src.to_dtype(DType::F32)?)?;
                seen += 1;
            }
        }
        if seen != values.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {seen}",
                values.len()
            )));
        }
        Ok(())
    }

    /// Sets one named tensor (parameter or buffer).
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        for map in [&self.params, &self.buffers] {
            if let Some(v) = map.data().lock().expect("varmap poisoned").get(name) {
                if v.dims() != value.dims() {
                    return Err(Error::Shape(format!(
                        "{name}: expected {:?}, got {:?}",
                        v.dims(),
                        value.dims()
                    )));
                }
                v.set(&value.to_dtype(DType::F32)?)?;
                return Ok(());
            }
        }
        Err(Error::Checkpoint(format!("no tensor named {name}")))
    }

    pub fn buffer_var(&self, name: &str) -> Option<Var> {
        self.buffers.data().lock().expect("varmap poisoned").get(name).cloned()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A name prefix inside a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.insert(&self.store.params, self.full(name), shape, init)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let full = self.full(name);
        self.store.insert(&self.store.buffers, full.clone(), shape, init)?;
        Ok(self.store.buffer_var(&full).expect("just inserted"))
    }
}
