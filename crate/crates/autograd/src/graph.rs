use ndarray::{Array2, ArrayD, Axis, Ix2, IxDyn, Zip};

pub type Tensor = ArrayD<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward closure may look at.
pub struct BackwardCtx<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    /// Whether each input needs a gradient. Closures may return `None` for
    /// inputs that do not.
    pub needs_grad: Vec<bool>,
}

pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    leaf: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by leaf variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn to2(t: &Tensor) -> ndarray::ArrayView2<'_, f64> {
    t.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a 2-D tensor")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            leaf: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
            leaf: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an operation. `backward` receives the output gradient and must
    /// return one entry per parent, in order.
    pub fn push_op(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
            leaf: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from `loss`, which must hold a single element.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.raw_dim()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if node.leaf || !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let backward = node.backward.as_ref().expect("op without backward");
            let ctx = BackwardCtx {
                grad: &grad,
                output: &node.value,
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                needs_grad: node
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Intermediate gradients were consumed above; only leaves remain.
        Gradients { grads }
    }

    // ---- elementwise and linear algebra -------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(-ctx.grad)]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| {
                vec![
                    ctx.needs_grad[0].then(|| ctx.grad * ctx.inputs[1]),
                    ctx.needs_grad[1].then(|| ctx.grad * ctx.inputs[0]),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad * factor)]),
        )
    }

    /// `a · b` for 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = to2(self.value(a)).dot(&to2(self.value(b))).into_dyn();
        self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| {
                let g = to2(ctx.grad);
                vec![
                    ctx.needs_grad[0].then(|| g.dot(&to2(ctx.inputs[1]).t()).into_dyn()),
                    ctx.needs_grad[1].then(|| to2(ctx.inputs[0]).t().dot(&g).into_dyn()),
                ]
            }),
        )
    }

    /// Adds a length-`M` bias to every row of an `N×M` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = {
            let mut v = to2(self.value(a)).to_owned();
            let b = self.value(bias);
            let b = b.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
            v += &b;
            v.into_dyn()
        };
        self.push_op(
            value,
            &[a, bias],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.clone()),
                    ctx.needs_grad[1].then(|| to2(ctx.grad).sum_axis(Axis(0)).into_dyn()),
                ]
            }),
        )
    }

    /// `x · w + b`, the usual fully connected layer on row vectors.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push_op(
            value,
            &[a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                Zip::from(&mut g)
                    .and(ctx.output)
                    .for_each(|g, &y| *g *= y * (1.0 - y));
                vec![Some(g)]
            }),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push_op(
            value,
            &[a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                Zip::from(&mut g)
                    .and(ctx.output)
                    .for_each(|g, &y| *g *= 1.0 - y * y);
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push_op(
            value,
            &[a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                Zip::from(&mut g)
                    .and(ctx.inputs[0])
                    .for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                vec![Some(g)]
            }),
        )
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| to2(self.value(p))).collect();
        let widths: Vec<usize> = views.iter().map(|v| v.ncols()).collect();
        let value = ndarray::concatenate(Axis(1), &views)
            .expect("row counts must agree")
            .into_dyn();
        self.push_op(
            value,
            parts,
            Box::new(move |ctx| {
                let g = to2(ctx.grad);
                let mut start = 0;
                widths
                    .iter()
                    .zip(&ctx.needs_grad)
                    .map(|(&w, &need)| {
                        let out = need.then(|| {
                            g.slice(ndarray::s![.., start..start + w]).to_owned().into_dyn()
                        });
                        start += w;
                        out
                    })
                    .collect()
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let src = self.value(a);
        let original = src.shape().to_vec();
        let value = src
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape must preserve element count");
        self.push_op(
            value,
            &[a],
            Box::new(move |ctx| {
                vec![Some(
                    ctx.grad
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(&original))
                        .expect("reshape backward"),
                )]
            }),
        )
    }

    /// Identity in the forward pass, blocks gradient flow in the backward
    /// pass.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.constant(value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::from_elem(IxDyn(&[]), self.value(a).sum());
        self.push_op(
            value,
            &[a],
            Box::new(|ctx| {
                let g = ctx.grad.iter().next().copied().unwrap_or(0.0);
                vec![Some(Tensor::from_elem(ctx.inputs[0].raw_dim(), g))]
            }),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean elementwise binary cross entropy between probabilities `pred`
    /// and a fixed target of the same shape. Predictions are clamped to
    /// `[eps, 1 - eps]`; the clamp passes no gradient where it is active.
    pub fn bce_mean(&mut self, pred: Var, target: &Tensor, eps: f64) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "bce shape mismatch");
        let n = p.len().max(1) as f64;
        let mut total = 0.0;
        Zip::from(p).and(target).for_each(|&p, &y| {
            let pc = p.clamp(eps, 1.0 - eps);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        });
        let value = Tensor::from_elem(IxDyn(&[]), total / n);
        let target = target.clone();
        self.push_op(
            value,
            &[pred],
            Box::new(move |ctx| {
                let g = ctx.grad.iter().next().copied().unwrap_or(0.0) / n;
                let mut out = Tensor::zeros(ctx.inputs[0].raw_dim());
                Zip::from(&mut out)
                    .and(ctx.inputs[0])
                    .and(&target)
                    .for_each(|o, &p, &y| {
                        if p > eps && p < 1.0 - eps {
                            *o = g * (p - y) / (p * (1.0 - p));
                        }
                    });
                vec![Some(out)]
            }),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Convenience for building 2-D tensors in tests and callers.
pub fn tensor2(a: Array2<f64>) -> Tensor {
    a.into_dyn()
}
