use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - y * y,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Shape descriptor of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Fully connected net `dims[0] -> ... -> dims[last]`, `hidden` on every
    /// hidden layer and softmax on the output. Per layer: weights
    /// (out x in, row-major) followed by biases.
    Mlp {
        dims: Vec<usize>,
        hidden: Activation,
    },
    /// LSTM cell: gate weights (4H x (I+H), gate order input, forget,
    /// candidate, output), gate biases (4H), head weights (H), head bias (1).
    Lstm {
        input: usize,
        hidden: usize,
        head: Activation,
    },
}

impl Layout {
    pub fn len(&self) -> usize {
        match self {
            Layout::Mlp { dims, .. } => dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum(),
            Layout::Lstm { input, hidden, .. } => {
                4 * hidden * (input + hidden) + 4 * hidden + hidden + 1
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Mlp { .. } => "mlp",
            Layout::Lstm { .. } => "lstm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Layout::Mlp { dims, .. } => {
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(Error::Layout(format!("invalid mlp dims {dims:?}")));
                }
            }
            Layout::Lstm { input, hidden, .. } => {
                if *input == 0 || *hidden == 0 {
                    return Err(Error::Layout(format!(
                        "invalid lstm sizes input={input} hidden={hidden}"
                    )));
                }
            }
        }
        Ok(())
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

/// Tags a parameter set's current values; caches remember the tag they were
/// computed under so that a backward pass can reject stale caches.
pub(crate) fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Common access to flat parameter storage.
pub trait FlatParams<T: Scalar> {
    fn layout(&self) -> &Layout;
    fn values(&self) -> &[T];
    /// Mutable access; invalidates outstanding caches.
    fn values_mut(&mut self) -> &mut [T];
    fn generation(&self) -> u64;
}

/// Flat gradient congruent with one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer<T> {
    layout: Layout,
    values: Vec<T>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn zeros(layout: &Layout) -> Self {
        GradBuffer {
            values: vec![T::zero(); layout.len()],
            layout: layout.clone(),
        }
    }

    pub fn from_values(layout: &Layout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape {
                context: "gradient buffer",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(GradBuffer {
            layout: layout.clone(),
            values,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_congruent(&self, layout: &Layout) -> Result<()> {
        if &self.layout != layout {
            return Err(Error::Layout(format!(
                "gradient layout {:?} does not match parameters {:?}",
                self.layout, layout
            )));
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradBuffer<T>, scale: T) -> Result<()> {
        other.check_congruent(&self.layout)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn dot(&self, other: &GradBuffer<T>) -> Result<T> {
        other.check_congruent(&self.layout)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = T::zero());
    }
}
