use std::collections::BTreeMap;

use super::scalar::{Dual, Scalar};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementary operation of a tape node. Operands always precede the node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input(usize),
    Const(f64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    /// `x^p` with a constant exponent.
    Pow(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Tanh(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Pow(..) => "pow",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Tanh(_) => "tanh",
        }
    }

    fn operands(&self) -> (Option<NodeId>, Option<NodeId>) {
        match *self {
            Op::Input(_) | Op::Const(_) => (None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => (Some(a), Some(b)),
            Op::Neg(a)
            | Op::Pow(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Tanh(a) => (Some(a), None),
        }
    }
}

/// Wengert list of scalar operations.
///
/// The tape is append-only while it is being built and read-only afterwards;
/// every evaluation owns its value and adjoint buffers, so one tape can be
/// evaluated from several threads at once.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Op>,
    inputs: Vec<(String, NodeId)>,
    output: Option<NodeId>,
}

/// Per-evaluation buffers: primal values and local partials of every node.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub values: Vec<T>,
    pub partials: Vec<[T; 2]>,
}

/// Number of nodes touched by each sweep of a gradient computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraversalStats {
    pub forward_visits: usize,
    pub backward_visits: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|(n, _)| n.as_str())
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(op);
        id
    }

    /// Declares a named input. Declaring the same name twice returns the
    /// existing node.
    pub fn var(&mut self, name: &str) -> NodeId {
        if let Some((_, id)) = self.inputs.iter().find(|(n, _)| n == name) {
            return *id;
        }
        let slot = self.inputs.len();
        let id = self.push(Op::Input(slot));
        self.inputs.push((name.to_string(), id));
        id
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }

    pub fn pow(&mut self, a: NodeId, exponent: f64) -> NodeId {
        self.push(Op::Pow(a, exponent))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    /// `c · a`
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = self.constant(c);
        self.mul(c, a)
    }

    /// `a + c`
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = self.constant(c);
        self.add(a, c)
    }

    /// Marks the node whose value and derivatives the tape reports.
    /// Without a mark the last recorded node is the output.
    pub fn set_output(&mut self, node: NodeId) {
        self.output = Some(node);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    /// Resolves named bindings into positional input values.
    pub fn bind(&self, bindings: &[(&str, f64)]) -> Result<Vec<f64>, AutodiffError> {
        for (name, _) in bindings {
            if !self.inputs.iter().any(|(n, _)| n == name) {
                return Err(AutodiffError::UnknownVariable(name.to_string()));
            }
        }
        self.inputs
            .iter()
            .map(|(name, _)| {
                bindings
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| AutodiffError::UnboundVariable(name.clone()))
            })
            .collect()
    }

    fn input_node(&self, name: &str) -> Result<NodeId, AutodiffError> {
        self.inputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| AutodiffError::UnknownVariable(name.to_string()))
    }

    /// Forward sweep over positional inputs; fills values and local partials.
    pub fn forward<T: Scalar>(&self, inputs: &[T]) -> Result<Evaluation<T>, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if inputs.len() != self.inputs.len() {
            return Err(AutodiffError::ArityMismatch {
                expected: self.inputs.len(),
                got: inputs.len(),
            });
        }
        let zero = T::from_f64(0.0);
        let one = T::from_f64(1.0);
        let mut values: Vec<T> = Vec::with_capacity(self.nodes.len());
        let mut partials: Vec<[T; 2]> = Vec::with_capacity(self.nodes.len());
        for (i, op) in self.nodes.iter().enumerate() {
            let v = |id: NodeId| values[id.0];
            let (value, local) = match *op {
                Op::Input(slot) => (inputs[slot], [zero, zero]),
                Op::Const(c) => (T::from_f64(c), [zero, zero]),
                Op::Add(a, b) => (v(a) + v(b), [one, one]),
                Op::Sub(a, b) => (v(a) - v(b), [one, -one]),
                Op::Mul(a, b) => (v(a) * v(b), [v(b), v(a)]),
                Op::Div(a, b) => {
                    let q = v(a) / v(b);
                    (q, [one / v(b), -q / v(b)])
                }
                Op::Neg(a) => (-v(a), [-one, zero]),
                Op::Pow(a, p) => {
                    let d = if p == 0.0 {
                        zero
                    } else {
                        v(a).powc(p - 1.0) * T::from_f64(p)
                    };
                    (v(a).powc(p), [d, zero])
                }
                Op::Exp(a) => {
                    let e = v(a).exp();
                    (e, [e, zero])
                }
                Op::Log(a) => (v(a).ln(), [one / v(a), zero]),
                Op::Sin(a) => (v(a).sin(), [v(a).cos(), zero]),
                Op::Cos(a) => (v(a).cos(), [-v(a).sin(), zero]),
                Op::Tanh(a) => {
                    let t = v(a).tanh();
                    (t, [one - t * t, zero])
                }
            };
            if !value.primal().is_finite() {
                return Err(AutodiffError::NumericOverflow {
                    node: i,
                    op: op.name(),
                });
            }
            values.push(value);
            partials.push(local);
        }
        Ok(Evaluation { values, partials })
    }

    /// Reverse sweep in fixed reverse-topological order. Returns the adjoint
    /// of every node with the output seeded to one.
    pub fn backward<T: Scalar>(&self, eval: &Evaluation<T>) -> Result<Vec<T>, AutodiffError> {
        let out = self.output().ok_or(AutodiffError::EmptyTape)?;
        let mut adjoint = vec![T::from_f64(0.0); self.nodes.len()];
        adjoint[out.0] = T::from_f64(1.0);
        for i in (0..=out.0).rev() {
            let op = &self.nodes[i];
            let (a, b) = op.operands();
            let bar = adjoint[i];
            if bar == T::from_f64(0.0) {
                continue;
            }
            for (slot, operand) in [a, b].into_iter().enumerate() {
                let Some(operand) = operand else { continue };
                let local = eval.partials[i][slot];
                if !local.is_finite() {
                    return Err(AutodiffError::NonDifferentiable {
                        node: i,
                        op: op.name(),
                    });
                }
                adjoint[operand.0] += bar * local;
            }
        }
        Ok(adjoint)
    }

    /// Value of the output node.
    pub fn evaluate(&self, bindings: &[(&str, f64)]) -> Result<f64, AutodiffError> {
        let inputs = self.bind(bindings)?;
        self.evaluate_at(&inputs)
    }

    pub fn evaluate_at(&self, inputs: &[f64]) -> Result<f64, AutodiffError> {
        let out = self.output().ok_or(AutodiffError::EmptyTape)?;
        Ok(self.forward(inputs)?.values[out.0])
    }

    /// ∂f/∂x for every declared input.
    pub fn gradient(&self, bindings: &[(&str, f64)]) -> Result<BTreeMap<String, f64>, AutodiffError> {
        let inputs = self.bind(bindings)?;
        let (grad, _) = self.gradient_with_stats(&inputs)?;
        Ok(self
            .inputs
            .iter()
            .zip(grad)
            .map(|((name, _), g)| (name.clone(), g))
            .collect())
    }

    /// Positional gradient plus the number of node visits per sweep.
    pub fn gradient_with_stats(&self, inputs: &[f64]) -> Result<(Vec<f64>, TraversalStats), AutodiffError> {
        let eval = self.forward(inputs)?;
        let adjoint = self.backward(&eval)?;
        let out = self.output().ok_or(AutodiffError::EmptyTape)?;
        let stats = TraversalStats {
            forward_visits: eval.values.len(),
            backward_visits: out.0 + 1,
        };
        let grad = self.inputs.iter().map(|(_, id)| adjoint[id.0]).collect();
        Ok((grad, stats))
    }

    /// ∂²f / ∂(and_then) ∂(wrt) by forward-over-reverse: both sweeps run in
    /// dual arithmetic with the tangent seeded on `wrt`.
    pub fn second_derivative(
        &self,
        bindings: &[(&str, f64)],
        wrt: &str,
        and_then: &str,
    ) -> Result<f64, AutodiffError> {
        let inputs = self.bind(bindings)?;
        let wrt = self.input_node(wrt)?;
        let and_then = self.input_node(and_then)?;
        self.second_derivative_at(&inputs, wrt, and_then)
    }

    pub fn second_derivative_at(
        &self,
        inputs: &[f64],
        wrt: NodeId,
        and_then: NodeId,
    ) -> Result<f64, AutodiffError> {
        let seeded: Vec<Dual> = self
            .inputs
            .iter()
            .zip(inputs)
            .map(|((_, id), &x)| Dual::new(x, if *id == wrt { 1.0 } else { 0.0 }))
            .collect();
        let eval = self.forward(&seeded)?;
        let adjoint = self.backward(&eval)?;
        let d = adjoint[and_then.0].tangent;
        if !d.is_finite() {
            return Err(AutodiffError::NonDifferentiable {
                node: and_then.0,
                op: "input",
            });
        }
        Ok(d)
    }

    /// Looks up a declared input by name.
    pub fn input(&self, name: &str) -> Option<NodeId> {
        self.input_node(name).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_example() -> Tape {
        // f(x) = 8 (x1^3 + x2 x3)
        let mut t = Tape::new();
        let x1 = t.var("x1");
        let x2 = t.var("x2");
        let x3 = t.var("x3");
        let x4 = t.pow(x1, 3.0);
        let x5 = t.mul(x2, x3);
        let x6 = t.add(x4, x5);
        t.scale(x6, 8.0);
        t
    }

    #[test]
    fn worked_example_value_and_gradient() {
        let t = worked_example();
        let at = [("x1", 3.0), ("x2", 5.0), ("x3", 2.0)];
        assert_eq!(t.evaluate(&at).unwrap(), 296.0);
        let g = t.gradient(&at).unwrap();
        assert_eq!(g["x1"], 216.0);
        assert_eq!(g["x2"], 16.0);
        assert_eq!(g["x3"], 40.0);
    }

    #[test]
    fn identity_and_tanh_at_zero() {
        let mut t = Tape::new();
        t.var("x1");
        assert_eq!(t.evaluate(&[("x1", 7.0)]).unwrap(), 7.0);

        let mut t = Tape::new();
        let x = t.var("x");
        t.tanh(x);
        assert_eq!(t.evaluate(&[("x", 0.0)]).unwrap(), 0.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.var("x");
        let y = t.var("y");
        let c = t.constant(4.5);
        t.set_output(c);
        let _ = (x, y);
        let g = t.gradient(&[("x", 1.0), ("y", -2.0)]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn sin_times_x_matches_central_difference() {
        let mut t = Tape::new();
        let x = t.var("x");
        let s = t.sin(x);
        t.mul(s, x);
        let f = |x: f64| x.sin() * x;
        let h = 1e-6;
        let fd = (f(1.3 + h) - f(1.3 - h)) / (2.0 * h);
        let g = t.gradient(&[("x", 1.3)]).unwrap()["x"];
        assert!(((g - fd) / fd).abs() < 1e-8, "{g} vs {fd}");
    }

    #[test]
    fn second_derivatives_of_square_and_sine() {
        let mut t = Tape::new();
        let x = t.var("x");
        t.pow(x, 2.0);
        assert_eq!(t.second_derivative(&[("x", 3.0)], "x", "x").unwrap(), 2.0);

        let mut t = Tape::new();
        let x = t.var("x");
        t.sin(x);
        let d2 = t.second_derivative(&[("x", 0.7)], "x", "x").unwrap();
        assert!((d2 + 0.7f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn mixed_second_derivative() {
        // f = x^2 y^3 → f_xy = 6 x y^2
        let mut t = Tape::new();
        let x = t.var("x");
        let y = t.var("y");
        let a = t.pow(x, 2.0);
        let b = t.pow(y, 3.0);
        t.mul(a, b);
        let at = [("x", 1.5), ("y", -0.5)];
        let fxy = t.second_derivative(&at, "x", "y").unwrap();
        let fyx = t.second_derivative(&at, "y", "x").unwrap();
        assert!((fxy - 6.0 * 1.5 * 0.25).abs() < 1e-14);
        assert!((fxy - fyx).abs() < 1e-14);
    }

    #[test]
    fn unbound_variable_is_named() {
        let t = worked_example();
        let err = t.evaluate(&[("x1", 1.0), ("x3", 1.0)]).unwrap_err();
        assert_eq!(err, AutodiffError::UnboundVariable("x2".into()));
    }

    #[test]
    fn overflow_identifies_node() {
        let mut t = Tape::new();
        let x = t.var("x");
        t.log(x);
        match t.evaluate(&[("x", 0.0)]).unwrap_err() {
            AutodiffError::NumericOverflow { node, op } => {
                assert_eq!(node, 1);
                assert_eq!(op, "log");
            }
            e => panic!("unexpected {e:?}"),
        }
        let mut t = Tape::new();
        let x = t.var("x");
        t.exp(x);
        assert!(matches!(
            t.evaluate(&[("x", 1000.0)]),
            Err(AutodiffError::NumericOverflow { node: 1, .. })
        ));
    }

    #[test]
    fn fractional_power_at_zero_is_not_differentiable() {
        let mut t = Tape::new();
        let x = t.var("x");
        t.pow(x, 1.5);
        // first derivative exists, the second does not
        assert_eq!(t.gradient(&[("x", 0.0)]).unwrap()["x"], 0.0);
        assert!(matches!(
            t.second_derivative(&[("x", 0.0)], "x", "x"),
            Err(AutodiffError::NonDifferentiable { .. })
        ));
        let mut t = Tape::new();
        let x = t.var("x");
        t.pow(x, 0.5);
        assert!(matches!(
            t.gradient(&[("x", 0.0)]),
            Err(AutodiffError::NonDifferentiable { .. })
        ));
    }

    #[test]
    fn each_sweep_visits_every_node_once() {
        let t = worked_example();
        let (_, stats) = t.gradient_with_stats(&[3.0, 5.0, 2.0]).unwrap();
        assert_eq!(stats.forward_visits, t.len());
        assert_eq!(stats.backward_visits, t.len());
    }

    #[test]
    fn replay_is_bit_identical() {
        let t = worked_example();
        let a = t.forward(&[0.3, -1.7, 2.9]).unwrap();
        let b = t.forward(&[0.3, -1.7, 2.9]).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn unknown_names_are_rejected() {
        let t = worked_example();
        let at = [("x1", 3.0), ("x2", 5.0), ("x3", 2.0), ("x9", 0.0)];
        assert_eq!(t.evaluate(&at).unwrap_err(), AutodiffError::UnknownVariable("x9".into()));
        let at = [("x1", 3.0), ("x2", 5.0), ("x3", 2.0)];
        assert!(t.second_derivative(&at, "x1", "q").is_err());
    }

    #[test]
    fn tape_is_shareable_across_threads() {
        let t = worked_example();
        let results: Vec<f64> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..4)
                .map(|i| {
                    let t = &t;
                    s.spawn(move || t.evaluate_at(&[i as f64, 1.0, 1.0]).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(results, vec![8.0, 16.0, 72.0, 224.0]);
    }
}
