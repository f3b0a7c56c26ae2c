use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Shape of one learnable tensor and the fan-in used to scale its init.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inputs feeding one output unit; `None` for biases.
    pub fan_in: Option<usize>,
}

/// Ordered parameter layout; the order is the checkpoint order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout(pub Vec<ParamSpec>);

impl Layout {
    /// Weight `(cout, cin, k, k)` and bias `(cout)` for a convolution.
    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: vec![cout, cin, k, k],
            fan_in: Some(cin * k * k),
        });
        self.bias(prefix, cout);
    }

    /// Weight `(cin, cout, k, k)` and bias for a `k == stride` transposed
    /// convolution, where each output unit sees exactly `cin` inputs.
    pub fn up_conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: vec![cin, cout, k, k],
            fan_in: Some(cin),
        });
        self.bias(prefix, cout);
    }

    fn bias(&mut self, prefix: &str, cout: usize) {
        self.0.push(ParamSpec {
            name: format!("{prefix}.bias"),
            shape: vec![cout],
            fan_in: None,
        });
    }

    pub fn scalar_count(&self) -> usize {
        self.0.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

/// Named, ordered learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Parameters<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter name {name}")));
            }
        }
        Ok(Self { entries, index })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases, drawn
    /// in layout order from one seeded stream. Values are drawn in double
    /// precision and rounded, so every precision sees the same weights.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let entries = layout
            .0
            .iter()
            .map(|spec| {
                let t = match spec.fan_in {
                    Some(fan_in) => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(&spec.shape, |_| T::from_f64(rng.uniform(-bound, bound)))
                    }
                    None => Tensor::zeros(&spec.shape),
                };
                (spec.name.clone(), t.with_requires_grad(true))
            })
            .collect();
        Self::from_entries(entries).expect("layout names are unique")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Whether names and shapes agree with `layout`, in order.
    pub fn matches(&self, layout: &Layout) -> bool {
        self.entries.len() == layout.0.len()
            && self
                .entries
                .iter()
                .zip(&layout.0)
                .all(|((n, t), s)| *n == s.name && t.shape() == s.shape.as_slice())
    }

    /// Records every parameter as a leaf. With `trainable == false` the
    /// leaves are constants and no gradient is kept.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                let mut leaf = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
                leaf.set_requires_grad(trainable);
                tape.leaf(leaf)
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Adds the gradients computed on `tape` into each parameter's buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &Bound) {
        for ((_, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            match tape.grad(v) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![T::zero(); t.numel()]),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Parameters recorded on a tape, looked up by name inside the blocks.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn new(names: impl IntoIterator<Item = String>, vars: Vec<Var>) -> Self {
        let index = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        Self { vars, index }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
