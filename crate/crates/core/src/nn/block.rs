use ndarray::{Array4, Ix4};

use super::{join, Layer, Relu, VisitFn, VisitMutFn};

/// Named children applied in order. Names become parameter-path segments.
#[derive(Default)]
pub struct Sequential {
    children: Vec<(String, Box<dyn Layer>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, name: impl Into<String>, layer: impl Layer + 'static) -> Self {
        self.children.push((name.into(), Box::new(layer)));
        self
    }

    pub fn push_boxed(&mut self, name: impl Into<String>, layer: Box<dyn Layer>) {
        self.children.push((name.into(), layer));
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, mut x: Array4<f64>) -> Array4<f64> {
        for (_, l) in &mut self.children {
            x = l.forward(x);
        }
        x
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut it = self.children.iter();
        let Some((_, first)) = it.next() else {
            return x.clone();
        };
        let mut y = first.infer(x);
        for (_, l) in it {
            y = l.infer(&y);
        }
        y
    }

    fn backward(&mut self, mut grad: Array4<f64>) -> Array4<f64> {
        for (_, l) in self.children.iter_mut().rev() {
            grad = l.backward(grad);
        }
        grad
    }

    fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        for (name, l) in &self.children {
            l.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        for (name, l) in &mut self.children {
            l.visit_mut(&join(prefix, name), f);
        }
    }

    fn set_frozen(&mut self, frozen: bool) {
        for (_, l) in &mut self.children {
            l.set_frozen(frozen);
        }
    }

    fn clear_cache(&mut self) {
        for (_, l) in &mut self.children {
            l.clear_cache();
        }
    }
}

/// `relu(body(x) + shortcut(x))`, where a missing shortcut is the identity.
/// Body children are visited without an extra path segment and the shortcut
/// under `downsample`, matching the usual residual-network parameter names.
pub struct Residual {
    body: Sequential,
    shortcut: Option<Sequential>,
    relu: Relu<Ix4>,
}

impl Residual {
    pub fn new(body: Sequential, shortcut: Option<Sequential>) -> Self {
        Self {
            body,
            shortcut,
            relu: Relu::new(),
        }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x.clone()),
            None => x.clone(),
        };
        let y = self.body.forward(x) + &skip;
        self.relu.forward_nd(y)
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let skip = match &self.shortcut {
            Some(s) => s.infer(x),
            None => x.clone(),
        };
        Relu::apply(&(self.body.infer(x) + &skip))
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let g = self.relu.backward_nd(grad);
        let skip = match &mut self.shortcut {
            Some(s) => s.backward(g.clone()),
            None => g.clone(),
        };
        self.body.backward(g) + &skip
    }

    fn visit(&self, prefix: &str, f: &mut VisitFn<'_>) {
        self.body.visit(prefix, f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "downsample"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_>) {
        self.body.visit_mut(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "downsample"), f);
        }
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.body.set_frozen(frozen);
        if let Some(s) = &mut self.shortcut {
            s.set_frozen(frozen);
        }
    }

    fn clear_cache(&mut self) {
        self.body.clear_cache();
        if let Some(s) = &mut self.shortcut {
            s.clear_cache();
        }
        self.relu.clear_cache();
    }
}
