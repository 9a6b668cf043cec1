/// A named parameter block; `data` is row-major over `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered list of parameter blocks. Gradient buffers and optimizer
/// moments use the same layout as the parameters they belong to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    pub blocks: Vec<Block>,
}

impl Params {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.blocks.push(Block {
            name: name.into(),
            shape,
            data,
        });
        self.blocks.len() - 1
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    data: vec![0.0; b.data.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for b in &mut self.blocks {
            b.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for b in &mut self.blocks {
            b.data.iter_mut().for_each(|x| *x *= f);
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.data.iter().all(|x| x.is_finite()))
    }

    /// Flat view by global index, in block order.
    pub fn get(&self, mut i: usize) -> f64 {
        for b in &self.blocks {
            if i < b.data.len() {
                return b.data[i];
            }
            i -= b.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: f64) {
        for b in &mut self.blocks {
            if i < b.data.len() {
                b.data[i] = v;
                return;
            }
            i -= b.data.len();
        }
        panic!("parameter index out of range")
    }
}
