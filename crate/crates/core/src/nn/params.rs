use crate::error::{Error, Result};

/// Handle to a block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

/// Named flat parameter arrays with gradient buffers of identical shape.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> ParamId {
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len(), "parameter shape does not match data");
        let id = ParamId(self.blocks.len());
        self.blocks.push(ParamBlock {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            value,
        });
        id
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.blocks[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.blocks[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &[f32] {
        &self.blocks[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.blocks[id.0].grad
    }

    /// Simultaneous read of the value and write of the gradient of one block.
    #[inline]
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&[f32], &mut [f32]) {
        let b = &mut self.blocks[id.0];
        (&b.value, &mut b.grad)
    }

    pub fn block(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn grads_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.grad.iter().all(|g| g.is_finite()))
    }

    /// Copies values from `other`, requiring identical names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.blocks.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "parameter block count {} != {}",
                other.blocks.len(),
                self.blocks.len()
            )));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Shape(format!("parameter block {} does not match {}", a.name, b.name)));
            }
            a.value.copy_from_slice(&b.value);
        }
        Ok(())
    }
}
