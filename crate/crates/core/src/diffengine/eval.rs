//! Forward evaluation, dual-number evaluation and reverse sweeps over a [`Graph`].

use super::graph::{sigmoid, softplus, Graph, Op};
use super::DiffError;

fn check_bindings(graph: &Graph, inputs: &[f64], params: &[f64]) -> Result<(), DiffError> {
    if inputs.len() < graph.num_inputs {
        return Err(DiffError::UnboundLeaf {
            kind: "input",
            index: inputs.len(),
        });
    }
    if params.len() < graph.num_params {
        return Err(DiffError::UnboundLeaf {
            kind: "param",
            index: params.len(),
        });
    }
    Ok(())
}

fn domain(op: &'static str, arg: f64) -> DiffError {
    DiffError::Domain { op, arg }
}

fn pow_checked(x: f64, p: f64) -> Result<f64, DiffError> {
    if x < 0.0 && p.fract() != 0.0 {
        return Err(domain("pow", x));
    }
    if x == 0.0 && p < 0.0 {
        return Err(domain("pow", x));
    }
    Ok(if p == 2.0 { x * x } else { x.powf(p) })
}

impl Graph {
    /// Evaluates every node; `values` is resized to the node count.
    pub fn forward(&self, inputs: &[f64], params: &[f64], values: &mut Vec<f64>) -> Result<(), DiffError> {
        check_bindings(self, inputs, params)?;
        values.clear();
        values.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Param(i) => params[i as usize],
                Op::Input(i) => inputs[i as usize],
                Op::Add(a, b) => values[a as usize] + values[b as usize],
                Op::Mul(a, b) => values[a as usize] * values[b as usize],
                Op::Neg(a) => -values[a as usize],
                Op::Recip(a) => {
                    let x = values[a as usize];
                    if x == 0.0 {
                        return Err(domain("recip", x));
                    }
                    1.0 / x
                }
                Op::Exp(a) => values[a as usize].exp(),
                Op::Log(a) => {
                    let x = values[a as usize];
                    if x <= 0.0 || x.is_nan() {
                        return Err(domain("log", x));
                    }
                    x.ln()
                }
                Op::Pow(a, p) => pow_checked(values[a as usize], p)?,
                Op::Min(a, b) => {
                    let (x, y) = (values[a as usize], values[b as usize]);
                    if x < y {
                        x
                    } else {
                        y
                    }
                }
                Op::Max(a, b) => {
                    let (x, y) = (values[a as usize], values[b as usize]);
                    if x > y {
                        x
                    } else {
                        y
                    }
                }
                Op::Softplus(a) => softplus(values[a as usize]),
                Op::Sigmoid(a) => sigmoid(values[a as usize]),
                Op::Select(l, r, x, y) => {
                    if values[l as usize] < values[r as usize] {
                        values[x as usize]
                    } else {
                        values[y as usize]
                    }
                }
            };
            values.push(v);
        }
        Ok(())
    }

    /// Output values after a [`Graph::forward`] pass.
    pub fn outputs_from(&self, values: &[f64]) -> Vec<f64> {
        self.outputs.iter().map(|&o| values[o as usize]).collect()
    }

    pub fn output_value(&self, values: &[f64], k: usize) -> f64 {
        values[self.outputs[k] as usize]
    }

    /// Convenience: evaluate and return the outputs.
    pub fn eval(&self, inputs: &[f64], params: &[f64]) -> Result<Vec<f64>, DiffError> {
        let mut values = Vec::new();
        self.forward(inputs, params, &mut values)?;
        Ok(self.outputs_from(&values))
    }

    /// Reverse sweep seeded with `seeds[k]` on output `k`.
    ///
    /// Adds the resulting parameter adjoints into `param_grad` and, when given,
    /// the input adjoints into `input_grad`. `values` must come from
    /// [`Graph::forward`] with the same bindings.
    pub fn backward(
        &self,
        values: &[f64],
        seeds: &[f64],
        adjoint: &mut Vec<f64>,
        param_grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        assert_eq!(seeds.len(), self.outputs.len(), "one seed per output");
        adjoint.clear();
        adjoint.resize(self.ops.len(), 0.0);
        for (&o, &s) in self.outputs.iter().zip(seeds) {
            adjoint[o as usize] += s;
        }
        for i in (0..self.ops.len()).rev() {
            let g = adjoint[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Const(_) => {}
                Op::Param(p) => param_grad[p as usize] += g,
                Op::Input(k) => {
                    if let Some(ig) = input_grad.as_deref_mut() {
                        ig[k as usize] += g;
                    }
                }
                Op::Add(a, b) => {
                    adjoint[a as usize] += g;
                    adjoint[b as usize] += g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (values[a as usize], values[b as usize]);
                    adjoint[a as usize] += g * vb;
                    adjoint[b as usize] += g * va;
                }
                Op::Neg(a) => adjoint[a as usize] -= g,
                Op::Recip(a) => {
                    let v = values[i];
                    adjoint[a as usize] -= g * v * v;
                }
                Op::Exp(a) => adjoint[a as usize] += g * values[i],
                Op::Log(a) => adjoint[a as usize] += g / values[a as usize],
                Op::Pow(a, p) => {
                    let x = values[a as usize];
                    let d = if p == 2.0 { 2.0 * x } else { p * x.powf(p - 1.0) };
                    adjoint[a as usize] += g * d;
                }
                Op::Min(a, b) => {
                    if values[a as usize] < values[b as usize] {
                        adjoint[a as usize] += g;
                    } else {
                        adjoint[b as usize] += g;
                    }
                }
                Op::Max(a, b) => {
                    if values[a as usize] > values[b as usize] {
                        adjoint[a as usize] += g;
                    } else {
                        adjoint[b as usize] += g;
                    }
                }
                Op::Softplus(a) => adjoint[a as usize] += g * sigmoid(values[a as usize]),
                Op::Sigmoid(a) => {
                    let s = values[i];
                    adjoint[a as usize] += g * s * (1.0 - s);
                }
                Op::Select(l, r, x, y) => {
                    if values[l as usize] < values[r as usize] {
                        adjoint[x as usize] += g;
                    } else {
                        adjoint[y as usize] += g;
                    }
                }
            }
        }
    }

    /// Dual-number evaluation seeded with tangent 1 on input `direction`.
    /// Returns `(value, tangent)` for every output.
    pub fn forward_dual(
        &self,
        inputs: &[f64],
        params: &[f64],
        direction: usize,
    ) -> Result<Vec<(f64, f64)>, DiffError> {
        check_bindings(self, inputs, params)?;
        let mut vals: Vec<(f64, f64)> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let d = match *op {
                Op::Const(c) => (c, 0.0),
                Op::Param(i) => (params[i as usize], 0.0),
                Op::Input(i) => (inputs[i as usize], if i as usize == direction { 1.0 } else { 0.0 }),
                Op::Add(a, b) => {
                    let (x, y) = (vals[a as usize], vals[b as usize]);
                    (x.0 + y.0, x.1 + y.1)
                }
                Op::Mul(a, b) => {
                    let (x, y) = (vals[a as usize], vals[b as usize]);
                    (x.0 * y.0, x.1 * y.0 + x.0 * y.1)
                }
                Op::Neg(a) => {
                    let x = vals[a as usize];
                    (-x.0, -x.1)
                }
                Op::Recip(a) => {
                    let x = vals[a as usize];
                    if x.0 == 0.0 {
                        return Err(domain("recip", x.0));
                    }
                    let r = 1.0 / x.0;
                    (r, -x.1 * r * r)
                }
                Op::Exp(a) => {
                    let x = vals[a as usize];
                    let e = x.0.exp();
                    (e, x.1 * e)
                }
                Op::Log(a) => {
                    let x = vals[a as usize];
                    if x.0 <= 0.0 || x.0.is_nan() {
                        return Err(domain("log", x.0));
                    }
                    (x.0.ln(), x.1 / x.0)
                }
                Op::Pow(a, p) => {
                    let x = vals[a as usize];
                    let v = pow_checked(x.0, p)?;
                    (v, x.1 * p * x.0.powf(p - 1.0))
                }
                Op::Min(a, b) => {
                    let (x, y) = (vals[a as usize], vals[b as usize]);
                    if x.0 < y.0 {
                        x
                    } else {
                        y
                    }
                }
                Op::Max(a, b) => {
                    let (x, y) = (vals[a as usize], vals[b as usize]);
                    if x.0 > y.0 {
                        x
                    } else {
                        y
                    }
                }
                Op::Softplus(a) => {
                    let x = vals[a as usize];
                    (softplus(x.0), x.1 * sigmoid(x.0))
                }
                Op::Sigmoid(a) => {
                    let x = vals[a as usize];
                    let s = sigmoid(x.0);
                    (s, x.1 * s * (1.0 - s))
                }
                Op::Select(l, r, x, y) => {
                    if vals[l as usize].0 < vals[r as usize].0 {
                        vals[x as usize]
                    } else {
                        vals[y as usize]
                    }
                }
            };
            vals.push(d);
        }
        Ok(self.outputs.iter().map(|&o| vals[o as usize]).collect())
    }
}
