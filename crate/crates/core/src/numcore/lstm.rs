use super::params::next_generation;
use super::{check_finite, dot, sigmoid, Activation, FlatParams, GradBuffer, Layout, Scalar};
use crate::{Error, Result};

/// LSTM cell with a scalar read-out head.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    layout: Layout,
    input: usize,
    hidden: usize,
    head: Activation,
    values: Vec<T>,
    generation: u64,
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Clone, Copy, Debug)]
struct Blocks {
    gate_w: usize,
    gate_b: usize,
    head_w: usize,
    head_b: usize,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input: usize, hidden: usize, head: Activation) -> Result<Self> {
        let layout = Layout::Lstm {
            input,
            hidden,
            head,
        };
        Self::from_values(&layout, vec![T::zero(); layout.len()])
    }

    pub fn from_values(layout: &Layout, values: Vec<T>) -> Result<Self> {
        let (input, hidden, head) = match layout {
            Layout::Lstm {
                input,
                hidden,
                head,
            } => (*input, *hidden, *head),
            other => {
                return Err(Error::Layout(format!(
                    "expected lstm layout, got {}",
                    other.name()
                )))
            }
        };
        layout.validate()?;
        if values.len() != layout.len() {
            return Err(Error::Shape {
                context: "lstm parameters",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(LstmParams {
            layout: layout.clone(),
            input,
            hidden,
            head,
            values,
            generation: next_generation(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn head_activation(&self) -> Activation {
        self.head
    }

    fn blocks(&self) -> Blocks {
        let h = self.hidden;
        let gate_w = 0;
        let gate_b = 4 * h * (self.input + h);
        let head_w = gate_b + 4 * h;
        Blocks {
            gate_w,
            gate_b,
            head_w,
            head_b: head_w + h,
        }
    }

    /// Range of the forget-gate biases in the flat vector.
    pub fn forget_bias_range(&self) -> std::ops::Range<usize> {
        let b = self.blocks().gate_b + self.hidden;
        b..b + self.hidden
    }

    /// Range of the recurrent (hidden-to-gate) weights of gate row `row`.
    pub fn recurrent_weight_range(&self, row: usize) -> std::ops::Range<usize> {
        let stride = self.input + self.hidden;
        let start = row * stride + self.input;
        start..start + self.hidden
    }
}

impl<T: Scalar> FlatParams<T> for LstmParams<T> {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn values(&self) -> &[T] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [T] {
        self.generation = next_generation();
        &mut self.values
    }

    fn generation(&self) -> u64 {
        self.generation
    }
}

/// Hidden and cell state, plus the number of steps taken since the last reset.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub steps: u64,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
            steps: 0,
        }
    }
}

/// Gradient of a loss with respect to an LSTM state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateGrad<T> {
    pub dh: Vec<T>,
    pub dc: Vec<T>,
}

impl<T: Scalar> StateGrad<T> {
    pub fn zeros(hidden: usize) -> Self {
        StateGrad {
            dh: vec![T::zero(); hidden],
            dc: vec![T::zero(); hidden],
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    generation: u64,
    /// Step index of the state this step consumed.
    step: u64,
    xh: Vec<T>,
    c_prev: Vec<T>,
    /// Activated gates: input, forget, candidate, output.
    gates: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
    output: T,
}

impl<T> LstmCache<T> {
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One cell update: returns the head output, the next state and the cache
/// needed to backpropagate through this step.
pub fn lstm_step<T: Scalar>(
    params: &LstmParams<T>,
    input: &[T],
    state: &LstmState<T>,
) -> Result<(T, LstmState<T>, LstmCache<T>)> {
    let (n_in, n_h) = (params.input, params.hidden);
    if input.len() != n_in {
        return Err(Error::Shape {
            context: "lstm input",
            expected: n_in,
            got: input.len(),
        });
    }
    if state.h.len() != n_h || state.c.len() != n_h {
        return Err(Error::Shape {
            context: "lstm state",
            expected: n_h,
            got: state.h.len().min(state.c.len()),
        });
    }
    check_finite(input, "lstm input")?;
    let blocks = params.blocks();
    let stride = n_in + n_h;
    let mut xh = Vec::with_capacity(stride);
    xh.extend_from_slice(input);
    xh.extend_from_slice(&state.h);

    let w = &params.values[blocks.gate_w..blocks.gate_b];
    let b = &params.values[blocks.gate_b..blocks.head_w];
    let mut gates = Vec::with_capacity(4 * n_h);
    for row in 0..4 * n_h {
        let wr = &w[row * stride..(row + 1) * stride];
        let z = b[row] + dot(wr, &xh);
        // candidate block uses tanh, the others are sigmoid gates
        gates.push(if row / n_h == 2 { z.tanh() } else { sigmoid(z) });
    }
    let mut c = Vec::with_capacity(n_h);
    let mut tanh_c = Vec::with_capacity(n_h);
    let mut h = Vec::with_capacity(n_h);
    for j in 0..n_h {
        let (i_g, f_g, g_g, o_g) = (
            gates[j],
            gates[n_h + j],
            gates[2 * n_h + j],
            gates[3 * n_h + j],
        );
        let cj = f_g * state.c[j] + i_g * g_g;
        let tc = cj.tanh();
        c.push(cj);
        tanh_c.push(tc);
        h.push(o_g * tc);
    }
    let head_w = &params.values[blocks.head_w..blocks.head_b];
    let pre = params.values[blocks.head_b] + dot(head_w, &h);
    let output = params.head.apply(pre);
    if !output.is_finite() {
        return Err(Error::Numeric("non-finite lstm output".into()));
    }
    let next = LstmState {
        h: h.clone(),
        c: c.clone(),
        steps: state.steps + 1,
    };
    let cache = LstmCache {
        generation: params.generation,
        step: state.steps,
        xh,
        c_prev: state.c.clone(),
        gates,
        tanh_c,
        h,
        output,
    };
    Ok((output, next, cache))
}

/// Accumulates into `grad` the gradient of `sum_t upstream[t] * output_t`
/// over the contiguous window `caches`, walking backwards in time.
/// `incoming` is the gradient flowing into the state after the last step
/// (zero for a truncated window). Returns the gradient with respect to the
/// state that entered the first step.
pub fn lstm_bptt_into<T: Scalar>(
    params: &LstmParams<T>,
    caches: &[LstmCache<T>],
    upstream: &[T],
    incoming: Option<&StateGrad<T>>,
    grad: &mut GradBuffer<T>,
) -> Result<StateGrad<T>> {
    let (n_in, n_h) = (params.input, params.hidden);
    if caches.len() != upstream.len() {
        return Err(Error::Shape {
            context: "bptt upstream",
            expected: caches.len(),
            got: upstream.len(),
        });
    }
    for pair in caches.windows(2) {
        if pair[1].step != pair[0].step + 1 {
            return Err(Error::Protocol(format!(
                "non-contiguous lstm caches: step {} followed by {}",
                pair[0].step, pair[1].step
            )));
        }
    }
    if caches.iter().any(|c| c.generation != params.generation) {
        return Err(Error::Protocol(
            "lstm cache was produced under different parameters".into(),
        ));
    }
    grad.check_congruent(&params.layout)?;
    check_finite(upstream, "bptt upstream")?;

    let blocks = params.blocks();
    let stride = n_in + n_h;
    let mut carry = match incoming {
        Some(s) => {
            if s.dh.len() != n_h || s.dc.len() != n_h {
                return Err(Error::Shape {
                    context: "incoming state gradient",
                    expected: n_h,
                    got: s.dh.len().min(s.dc.len()),
                });
            }
            s.clone()
        }
        None => StateGrad::zeros(n_h),
    };
    let w = &params.values[blocks.gate_w..blocks.gate_b];
    let head_w = &params.values[blocks.head_w..blocks.head_b];
    let g = grad.values_mut();
    let mut dz = vec![T::zero(); 4 * n_h];

    for (cache, &u) in caches.iter().zip(upstream).rev() {
        let d_pre = u * params.head.derivative_from_output(cache.output);
        // head
        for j in 0..n_h {
            g[blocks.head_w + j] += d_pre * cache.h[j];
        }
        g[blocks.head_b] += d_pre;

        for j in 0..n_h {
            let dh = carry.dh[j] + d_pre * head_w[j];
            let (i_g, f_g, g_g, o_g) = (
                cache.gates[j],
                cache.gates[n_h + j],
                cache.gates[2 * n_h + j],
                cache.gates[3 * n_h + j],
            );
            let tc = cache.tanh_c[j];
            let dc = carry.dc[j] + dh * o_g * (T::one() - tc * tc);
            dz[j] = dc * g_g * i_g * (T::one() - i_g);
            dz[n_h + j] = dc * cache.c_prev[j] * f_g * (T::one() - f_g);
            dz[2 * n_h + j] = dc * i_g * (T::one() - g_g * g_g);
            dz[3 * n_h + j] = dh * tc * o_g * (T::one() - o_g);
            carry.dc[j] = dc * f_g;
        }
        carry.dh.iter_mut().for_each(|v| *v = T::zero());
        for row in 0..4 * n_h {
            let d = dz[row];
            if d == T::zero() {
                continue;
            }
            g[blocks.gate_b + row] += d;
            let gw = &mut g[blocks.gate_w + row * stride..blocks.gate_w + (row + 1) * stride];
            for (gv, &xv) in gw.iter_mut().zip(&cache.xh) {
                *gv += d * xv;
            }
            let wr = &w[row * stride + n_in..(row + 1) * stride];
            for (dh, &wv) in carry.dh.iter_mut().zip(wr) {
                *dh += d * wv;
            }
        }
    }
    Ok(carry)
}

pub fn lstm_bptt<T: Scalar>(
    params: &LstmParams<T>,
    caches: &[LstmCache<T>],
    upstream: &[T],
    incoming: Option<&StateGrad<T>>,
) -> Result<(GradBuffer<T>, StateGrad<T>)> {
    let mut grad = GradBuffer::zeros(&params.layout);
    let out = lstm_bptt_into(params, caches, upstream, incoming, &mut grad)?;
    Ok((grad, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{central_difference, init_lstm, max_relative_error};

    fn net(seed: u64, head: Activation) -> LstmParams<f64> {
        let mut p = init_lstm::<f64>(3, 4, head, 1.0, seed).unwrap();
        for (i, v) in p.values_mut().iter_mut().enumerate() {
            *v += 0.03 * (i as f64 * 1.7).sin();
        }
        p
    }

    fn run(
        p: &LstmParams<f64>,
        xs: &[Vec<f64>],
    ) -> (Vec<f64>, Vec<LstmCache<f64>>, LstmState<f64>) {
        let mut s = LstmState::zeros(p.hidden_dim());
        let mut outs = Vec::new();
        let mut caches = Vec::new();
        for x in xs {
            let (r, next, c) = lstm_step(p, x, &s).unwrap();
            outs.push(r);
            caches.push(c);
            s = next;
        }
        (outs, caches, s)
    }

    fn inputs(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| (0..3).map(|k| ((t * 3 + k) as f64 * 0.9).cos()).collect())
            .collect()
    }

    #[test]
    fn zero_params_zero_state_give_zero() {
        let p = LstmParams::<f64>::zeros(5, 8, Activation::Identity).unwrap();
        let (r, next, _) = lstm_step(&p, &[1.0, 2.0, 3.0, 4.0, 5.0], &LstmState::zeros(8)).unwrap();
        assert_eq!(r, 0.0);
        assert!(next.h.iter().chain(&next.c).all(|&v| v == 0.0));
    }

    #[test]
    fn state_dependence_and_bounded_hidden() {
        let p = net(4, Activation::Identity);
        let xs = vec![vec![0.5, -0.5, 1.0]; 4];
        let (outs, _, s) = run(&p, &xs);
        assert!(outs.windows(2).any(|w| w[0] != w[1]));
        assert!(s.h.iter().all(|h| h.abs() <= 1.0));
    }

    #[test]
    fn single_step_gradient_matches_finite_differences() {
        for head in [Activation::Identity, Activation::Tanh] {
            let p = net(1, head);
            let xs = inputs(1);
            let (_, caches, _) = run(&p, &xs);
            let (analytic, _) = lstm_bptt(&p, &caches, &[1.0], None).unwrap();
            let numeric = central_difference(p.values(), 1e-6, |v| {
                let q = LstmParams::from_values(p.layout(), v.to_vec()).unwrap();
                run(&q, &xs).0[0]
            });
            let err = max_relative_error(analytic.values(), &numeric);
            assert!(err < 1e-5, "{head:?}: {err}");
        }
    }

    #[test]
    fn sequence_gradient_matches_finite_differences() {
        let p = net(7, Activation::Identity);
        let xs = inputs(5);
        let up = [0.3, -1.0, 0.5, 2.0, -0.7];
        let (_, caches, _) = run(&p, &xs);
        let (analytic, _) = lstm_bptt(&p, &caches, &up, None).unwrap();
        let numeric = central_difference(p.values(), 1e-6, |v| {
            let q = LstmParams::from_values(p.layout(), v.to_vec()).unwrap();
            run(&q, &xs).0.iter().zip(&up).map(|(r, u)| r * u).sum()
        });
        let err = max_relative_error(analytic.values(), &numeric);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn outgoing_state_gradient_matches_finite_differences() {
        let p = net(2, Activation::Tanh);
        let xs = inputs(3);
        let up = [1.0, 0.5, -0.25];
        let start = LstmState {
            h: vec![0.1, -0.2, 0.3, 0.05],
            c: vec![-0.4, 0.2, 0.0, 0.6],
            steps: 10,
        };
        let forward = |s0: &LstmState<f64>| -> (f64, Vec<LstmCache<f64>>) {
            let mut s = s0.clone();
            let mut total = 0.0;
            let mut caches = Vec::new();
            for (x, u) in xs.iter().zip(&up) {
                let (r, next, c) = lstm_step(&p, x, &s).unwrap();
                total += u * r;
                caches.push(c);
                s = next;
            }
            (total, caches)
        };
        let (_, caches) = forward(&start);
        let (_, sg) = lstm_bptt(&p, &caches, &up, None).unwrap();
        let mut flat = start.h.clone();
        flat.extend_from_slice(&start.c);
        let numeric = central_difference(&flat, 1e-6, |v| {
            let s = LstmState {
                h: v[..4].to_vec(),
                c: v[4..].to_vec(),
                steps: 10,
            };
            forward(&s).0
        });
        let mut analytic = sg.dh.clone();
        analytic.extend_from_slice(&sg.dc);
        assert!(max_relative_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = net(3, Activation::Identity);
        let (_, caches, _) = run(&p, &inputs(4));
        let (g, s) = lstm_bptt(&p, &caches, &[0.0; 4], None).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(s.dh.iter().chain(&s.dc).all(|&v| v == 0.0));
    }

    #[test]
    fn without_recurrence_two_step_gradient_is_sum_of_one_step_gradients() {
        let mut p = net(5, Activation::Identity);
        let n_h = p.hidden_dim();
        // zero recurrent weights and forget gates fully closed: steps decouple
        for row in 0..4 * n_h {
            let r = p.recurrent_weight_range(row);
            p.values_mut()[r].iter_mut().for_each(|v| *v = 0.0);
        }
        let fr = p.forget_bias_range();
        let stride = p.input_dim() + n_h;
        for j in fr.clone() {
            p.values_mut()[j] = -1e3;
        }
        let n_in = p.input_dim();
        for row in n_h..2 * n_h {
            p.values_mut()[row * stride..row * stride + n_in]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let xs = inputs(2);
        let split_gap = |p: &LstmParams<f64>| -> f64 {
            let (_, caches, _) = run(p, &xs);
            let (joint, _) = lstm_bptt(p, &caches, &[1.0, 1.0], None).unwrap();
            // each step differentiated alone, starting from the state it actually saw
            let (g0, _) = lstm_bptt(p, &caches[..1], &[1.0], None).unwrap();
            let (g1, _) = lstm_bptt(p, &caches[1..], &[1.0], None).unwrap();
            joint
                .values()
                .iter()
                .zip(g0.values())
                .zip(g1.values())
                .map(|((a, b), c)| (a - (b + c)).abs())
                .fold(0.0, f64::max)
        };
        assert!(split_gap(&p) < 1e-12);
        // with recurrence restored the identity no longer holds
        assert!(split_gap(&net(5, Activation::Identity)) > 1e-6);
    }

    #[test]
    fn non_contiguous_caches_are_rejected() {
        let p = net(1, Activation::Identity);
        let (_, caches, _) = run(&p, &inputs(3));
        let gapped = vec![caches[0].clone(), caches[2].clone()];
        assert!(matches!(
            lstm_bptt(&p, &gapped, &[1.0, 1.0], None),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let p = net(1, Activation::Identity);
        assert!(matches!(
            lstm_step(&p, &[0.0; 2], &LstmState::zeros(4)),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            lstm_step(&p, &[0.0; 3], &LstmState::zeros(5)),
            Err(Error::Shape { .. })
        ));
    }
}
