use crate::error::{PgnError, Result};
use crate::scalar::Scalar;

/// A plain shape-tagged row-major array, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<T: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> TensorData<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(PgnError::dim(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(PgnError::Arg(format!("zero-sized dim in shape {:?}", shape)));
        }
        Ok(TensorData { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        TensorData {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        TensorData {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n: usize = shape.iter().product();
        TensorData {
            shape,
            data: vec![v; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element type (used to move models between f32 and f64 modes).
    pub fn cast<U: Scalar>(&self) -> TensorData<U> {
        TensorData {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

impl TensorRef {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) type BackFn<T> = Box<dyn Fn(&Graph<T>, &[T]) -> Vec<Vec<T>>>;

pub(crate) struct Node<T: Scalar> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub parents: Vec<usize>,
    pub backward: Option<BackFn<T>>,
}

/// Recorded computation tape. Operations are appended in forward order;
/// `backward` visits them in exact reverse recording order.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Toggle NaN/Inf detection at op boundaries.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: TensorRef) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn value(&self, t: TensorRef) -> &[T] {
        &self.nodes[t.0].value
    }

    /// Accumulated gradient of a node, if backward has touched it.
    pub fn grad(&self, t: TensorRef) -> Option<&[T]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn detach(&self, t: TensorRef) -> TensorData<T> {
        TensorData {
            shape: self.nodes[t.0].shape.clone(),
            data: self.nodes[t.0].value.clone(),
        }
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Non-trainable leaf (inputs, targets, frozen parameters).
    pub fn input(&mut self, t: &TensorData<T>) -> TensorRef {
        self.push_leaf(t, false)
    }

    /// Trainable leaf: gradients are retained for the optimizer.
    pub fn param(&mut self, t: &TensorData<T>) -> TensorRef {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, t: &TensorData<T>, _trainable: bool) -> TensorRef {
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: t.data.clone(),
            grad: None,
            parents: Vec::new(),
            backward: None,
        });
        TensorRef(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(
        &mut self,
        op: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: Vec<usize>,
        backward: BackFn<T>,
    ) -> Result<TensorRef> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.check_finite {
            if let Some(i) = value.iter().position(|v| !v.is_finite()) {
                return Err(PgnError::NonFinite { op, index: i });
            }
        }
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            parents,
            backward: Some(backward),
        });
        Ok(TensorRef(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into each
    /// node's `grad` buffer; repeated calls without `zero_grads` sum.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(PgnError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        let mut pending: Vec<Option<Vec<T>>> = vec![None; n];
        pending[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if let Some(back) = self.nodes[i].backward.as_ref() {
                let contribs = back(self, &g);
                debug_assert_eq!(contribs.len(), self.nodes[i].parents.len());
                let parents = self.nodes[i].parents.clone();
                for (p, c) in parents.into_iter().zip(contribs) {
                    match pending[p].as_mut() {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(c) {
                                *a += b;
                            }
                        }
                        None => pending[p] = Some(c),
                    }
                }
            }
            // retain the gradient on the node itself
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}
