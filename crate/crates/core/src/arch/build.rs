//! Building and running networks from an [`ArchitectureSpec`].
//!
//! A built network is a flat program of steps over value slots plus a
//! parameter store. Each forward pass replays the program onto a fresh
//! tape, so training, inference and saliency all share one code path.

use rand_distr::{Distribution, StandardNormal};

use super::{ArchitectureSpec, Family, FilterMode, LongRange, PathWidths};
use crate::error::{CoreError, Result};
use crate::rng::rng_for;
use crate::tensor::{BnMode, BnState, Padding, Scalar, Tape, Tensor, TensorId};

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::new(&self.shape, self.data.clone()).expect("param shape consistent")
    }
}

#[derive(Clone, Debug)]
enum StepOp {
    Conv { w: usize, b: usize, stride: usize },
    Bn { gamma: usize, beta: usize, state: usize },
    Relu,
    AvgPool2,
    GlobalAvgPool,
    Dense { w: usize, b: usize },
    Add,
    Scale(f64),
    Concat,
}

#[derive(Clone, Debug)]
struct Step {
    op: StepOp,
    ins: Vec<usize>,
    tag: Option<&'static str>,
}

/// A built, trainable network. Generic over the scalar so the gradient-check
/// suite can run identical graphs in f64.
pub struct NetworkGraph<T: Scalar> {
    pub spec: ArchitectureSpec,
    params: Vec<Param<T>>,
    bn_states: Vec<BnState<T>>,
    steps: Vec<Step>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    pub output: TensorId,
    pub input: TensorId,
    pub param_ids: Vec<TensorId>,
    /// Tagged intermediate activations: (tag, tape id).
    pub taps: Vec<(&'static str, TensorId)>,
}

struct Builder<T: Scalar> {
    params: Vec<Param<T>>,
    bn_states: Vec<BnState<T>>,
    steps: Vec<Step>,
    rng: rand_chacha::ChaCha8Rng,
    ws: f64,
    planar: bool,
}

impl<T: Scalar> Builder<T>
where
    StandardNormal: Distribution<T>,
{
    fn width(&self, w: usize) -> usize {
        ((w as f64 * self.ws).round() as usize).max(1)
    }

    fn he_param(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| {
                let z: T = StandardNormal.sample(&mut self.rng);
                z * T::from_f64(std)
            })
            .collect();
        self.params.push(Param { name, shape, data });
        self.params.len() - 1
    }

    fn const_param(&mut self, name: String, shape: Vec<usize>, v: f64) -> usize {
        let n: usize = shape.iter().product();
        self.params.push(Param {
            name,
            shape,
            data: vec![T::from_f64(v); n],
        });
        self.params.len() - 1
    }

    fn push(&mut self, op: StepOp, ins: Vec<usize>) -> usize {
        self.steps.push(Step { op, ins, tag: None });
        // slot 0 is the network input; step i produces slot i + 1
        self.steps.len()
    }

    fn tag(&mut self, t: &'static str) {
        self.steps.last_mut().expect("step to tag").tag = Some(t);
    }

    /// Bare convolution. `k` is the lateral kernel extent; the z-extent
    /// follows the filter mode.
    fn conv(&mut self, x: usize, cin: usize, cout: usize, k: usize, stride: usize, name: &str) -> usize {
        let kz = if self.planar { 1 } else { k };
        let fan_in = cin * k * k * kz;
        let w = self.he_param(format!("{name}.w"), vec![cout, cin, k, k, kz], fan_in);
        let b = self.const_param(format!("{name}.b"), vec![cout], 0.0);
        self.push(StepOp::Conv { w, b, stride }, vec![x])
    }

    fn bn(&mut self, x: usize, c: usize, name: &str) -> usize {
        let gamma = self.const_param(format!("{name}.gamma"), vec![c], 1.0);
        let beta = self.const_param(format!("{name}.beta"), vec![c], 0.0);
        self.bn_states.push(BnState::new(c, T::from_f64(0.9)));
        let state = self.bn_states.len() - 1;
        self.push(StepOp::Bn { gamma, beta, state }, vec![x])
    }

    fn relu(&mut self, x: usize) -> usize {
        self.push(StepOp::Relu, vec![x])
    }

    fn conv_bn(&mut self, x: usize, cin: usize, cout: usize, k: usize, stride: usize, name: &str) -> usize {
        let c = self.conv(x, cin, cout, k, stride, name);
        self.bn(c, cout, &format!("{name}.bn"))
    }

    fn conv_bn_relu(&mut self, x: usize, cin: usize, cout: usize, k: usize, stride: usize, name: &str) -> usize {
        let b = self.conv_bn(x, cin, cout, k, stride, name);
        self.relu(b)
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        self.push(StepOp::Add, vec![a, b])
    }

    fn scale(&mut self, x: usize, s: f64) -> usize {
        self.push(StepOp::Scale(s), vec![x])
    }

    fn concat(&mut self, parts: Vec<usize>) -> usize {
        self.push(StepOp::Concat, parts)
    }

    // ── family blocks ───────────────────────────────────────────────

    /// Two 3x3x3 convolutions with an identity (or projected) shortcut and
    /// activation after the addition.
    fn block_plain(&mut self, x: usize, cin: usize, cout: usize, stride: usize, name: &str) -> usize {
        let c1 = self.conv_bn_relu(x, cin, cout, 3, stride, &format!("{name}.conv1"));
        let c2 = self.conv_bn(c1, cout, cout, 3, 1, &format!("{name}.conv2"));
        let sc = if stride != 1 || cin != cout {
            self.conv_bn(x, cin, cout, 1, stride, &format!("{name}.shortcut"))
        } else {
            x
        };
        let sum = self.add(c2, sc);
        self.relu(sum)
    }

    /// 1x1x1 down, 3x3x3, 1x1x1 up; channel bottleneck factor 4.
    fn block_bottleneck(&mut self, x: usize, cin: usize, cout: usize, stride: usize, name: &str) -> usize {
        let mid = (cout / 4).max(1);
        let c1 = self.conv_bn_relu(x, cin, mid, 1, stride, &format!("{name}.reduce"));
        let c2 = self.conv_bn_relu(c1, mid, mid, 3, 1, &format!("{name}.conv"));
        let c3 = self.conv_bn(c2, mid, cout, 1, 1, &format!("{name}.expand"));
        let sc = if stride != 1 || cin != cout {
            self.conv_bn(x, cin, cout, 1, stride, &format!("{name}.shortcut"))
        } else {
            x
        };
        let sum = self.add(c3, sc);
        self.relu(sum)
    }

    /// `cardinality` identical bottleneck paths summed into the residual.
    fn block_grouped(
        &mut self,
        x: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        cardinality: usize,
        name: &str,
    ) -> usize {
        let pw = (cout / 16).max(1);
        let mut acc: Option<usize> = None;
        for p in 0..cardinality {
            let pn = format!("{name}.path{p}");
            let c1 = self.conv_bn_relu(x, cin, pw, 1, stride, &format!("{pn}.reduce"));
            let c2 = self.conv_bn_relu(c1, pw, pw, 3, 1, &format!("{pn}.conv"));
            let c3 = self.conv(c2, pw, cout, 1, 1, &format!("{pn}.expand"));
            acc = Some(match acc {
                None => c3,
                Some(prev) => self.add(prev, c3),
            });
        }
        let merged = self.bn(acc.expect("cardinality >= 1"), cout, &format!("{name}.bn"));
        let sc = if stride != 1 || cin != cout {
            self.conv_bn(x, cin, cout, 1, stride, &format!("{name}.shortcut"))
        } else {
            x
        };
        let sum = self.add(merged, sc);
        self.relu(sum)
    }

    /// Three paths of individually chosen widths, concatenated, recovered to
    /// the block width by a bare 1x1x1 convolution, scaled by 0.2 and added
    /// onto the shortcut.
    fn block_multipath(
        &mut self,
        x: usize,
        cin: usize,
        cout: usize,
        n: PathWidths,
        stride: usize,
        name: &str,
    ) -> usize {
        let (n1, n2, n3) = (self.width(n.n1), self.width(n.n2), self.width(n.n3));
        let p1 = self.conv_bn_relu(x, cin, n1, 1, stride, &format!("{name}.p1.conv1"));
        let p2a = self.conv_bn_relu(x, cin, n2, 1, stride, &format!("{name}.p2.conv1"));
        let p2 = self.conv_bn_relu(p2a, n2, n2, 3, 1, &format!("{name}.p2.conv2"));
        let p3a = self.conv_bn_relu(x, cin, n3, 3, stride, &format!("{name}.p3.conv1"));
        let p3 = self.conv_bn_relu(p3a, n3, n3, 3, 1, &format!("{name}.p3.conv2"));
        let cat = self.concat(vec![p1, p2, p3]);
        let rec = self.conv(cat, n1 + n2 + n3, cout, 1, 1, &format!("{name}.recover"));
        let scaled = self.scale(rec, 0.2);
        let sc = if stride != 1 || cin != cout {
            self.conv_bn(x, cin, cout, 1, stride, &format!("{name}.shortcut"))
        } else {
            x
        };
        let sum = self.add(scaled, sc);
        self.relu(sum)
    }
}

/// Build a fully initialized network. Initialization is deterministic in
/// `(spec, seed)`, and checkpoint parameter order is a pure function of the
/// spec.
pub fn build<T: Scalar>(spec: &ArchitectureSpec, seed: u64) -> Result<NetworkGraph<T>>
where
    StandardNormal: Distribution<T>,
{
    spec.validate()?;
    let mut b = Builder::<T> {
        params: Vec::new(),
        bn_states: Vec::new(),
        steps: Vec::new(),
        rng: rng_for(seed, "init", 0),
        ws: spec.width_scale,
        planar: spec.filter_mode == FilterMode::Planar,
    };

    let (s1, s2, w1, w2) = match spec.family {
        Family::ResNetA3D => (32, 56, 112, 224),
        Family::ResNetB3D => (32, 128, 256, 512),
        Family::Inception3D => (64, 160, 158, 212),
        Family::ResNeXt3D => (32, 128, 256, 512),
    };
    let (s1, s2, w1, w2) = (b.width(s1), b.width(s2), b.width(w1), b.width(w2));
    let blocks_per_module = match spec.family {
        Family::ResNetA3D => (2, 2),
        _ => (4, 5),
    };

    // stem: unit-stride conv, then the first spatial halving
    let input_slot = 0usize;
    let c1 = b.conv_bn_relu(input_slot, spec.input_channels, s1, 3, 1, "stem.conv1");
    let stem = b.conv_bn_relu(c1, s1, s2, 3, 2, "stem.conv2");

    let build_module = |b: &mut Builder<T>, m: usize, x: usize, cin: usize, cout: usize| -> usize {
        let count = if m == 1 { blocks_per_module.0 } else { blocks_per_module.1 };
        let mut cur = x;
        let mut cur_c = cin;
        for blk in 0..count {
            let stride = if blk == 0 { 2 } else { 1 };
            let name = format!("m{m}.b{blk}");
            cur = match spec.family {
                Family::ResNetA3D => b.block_plain(cur, cur_c, cout, stride, &name),
                Family::ResNetB3D => b.block_bottleneck(cur, cur_c, cout, stride, &name),
                Family::ResNeXt3D => {
                    b.block_grouped(cur, cur_c, cout, stride, spec.cardinality, &name)
                }
                Family::Inception3D => {
                    let widths = if m == 1 {
                        if blk == 0 {
                            spec.inception_widths.module1_down
                        } else {
                            spec.inception_widths.module1
                        }
                    } else if blk == 0 {
                        spec.inception_widths.module2_down
                    } else {
                        spec.inception_widths.module2
                    };
                    b.block_multipath(cur, cur_c, cout, widths, stride, &name)
                }
            };
            if blk == 0 {
                b.tag(if m == 1 { "module1.entry" } else { "module2.entry" });
            }
            cur_c = cout;
        }
        cur
    };

    let m1 = build_module(&mut b, 1, stem, s2, w1);
    let m1 = apply_long_range(&mut b, spec.long_range, stem, s2, m1, w1, "long1");
    let m2 = build_module(&mut b, 2, m1, w1, w2);
    let m2 = apply_long_range(&mut b, spec.long_range, m1, w1, m2, w2, "long2");

    let pooled = b.push(StepOp::GlobalAvgPool, vec![m2]);
    let hw = b.he_param("head.w".into(), vec![spec.output_dim, w2], w2);
    let hb = b.const_param("head.b".into(), vec![spec.output_dim], 0.0);
    let _out = b.push(StepOp::Dense { w: hw, b: hb }, vec![pooled]);

    Ok(NetworkGraph {
        spec: spec.clone(),
        params: b.params,
        bn_states: b.bn_states,
        steps: b.steps,
    })
}

/// Feature transfer across a whole module.
fn apply_long_range<T: Scalar>(
    b: &mut Builder<T>,
    mode: LongRange,
    module_in: usize,
    cin: usize,
    module_out: usize,
    cout: usize,
    name: &str,
) -> usize
where
    StandardNormal: Distribution<T>,
{
    match mode {
        LongRange::None => module_out,
        LongRange::Residual => {
            let w = b.he_param(format!("{name}.proj.w"), vec![cout, cin, 1, 1, 1], cin);
            let bias = b.const_param(format!("{name}.proj.b"), vec![cout], 0.0);
            let proj = b.push(StepOp::Conv { w, b: bias, stride: 2 }, vec![module_in]);
            b.add(module_out, proj)
        }
        LongRange::Concat => {
            let pooled = b.push(StepOp::AvgPool2, vec![module_in]);
            let cat = b.concat(vec![module_out, pooled]);
            let w = b.he_param(
                format!("{name}.reduce.w"),
                vec![cout, cout + cin, 1, 1, 1],
                cout + cin,
            );
            let bias = b.const_param(format!("{name}.reduce.b"), vec![cout], 0.0);
            b.push(StepOp::Conv { w, b: bias, stride: 1 }, vec![cat])
        }
    }
}

impl<T: Scalar> NetworkGraph<T> {
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState<T>] {
        &self.bn_states
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnState<T>] {
        &mut self.bn_states
    }

    /// Trainable element count: conv and dense weights and biases, batch
    /// norm gains and shifts. Running statistics are state, not parameters.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Family blocks (stem and head excluded).
    pub fn count_blocks(&self) -> usize {
        match self.spec.family {
            Family::ResNetA3D => 4,
            _ => 9,
        }
    }

    /// Cast parameters and state to another scalar width, keeping the graph.
    pub fn cast<U: Scalar>(&self) -> NetworkGraph<U> {
        NetworkGraph {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            bn_states: self.bn_states.iter().map(|s| s.cast()).collect(),
            steps: self.steps.clone(),
        }
    }

    /// Replay the program on a tape. `train_params` controls whether
    /// parameter leaves require gradients; `input_grad` does the same for
    /// the input (saliency needs it).
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        mode: BnMode,
        train_params: bool,
        input_grad: bool,
    ) -> Result<ForwardPass> {
        let shape = input.shape().to_vec();
        if shape.len() != 5 || shape[1] != self.spec.input_channels {
            return Err(CoreError::ShapeMismatch {
                ctx: "network input",
                expected: format!("[b, {}, x, y, z]", self.spec.input_channels),
                got: format!("{:?}", shape),
            });
        }
        let input_id = tape.leaf(input, input_grad);
        let param_ids: Vec<TensorId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor(), train_params))
            .collect();

        let mut slots: Vec<TensorId> = Vec::with_capacity(self.steps.len() + 1);
        slots.push(input_id);
        let mut taps = Vec::new();
        for step in &self.steps {
            let id = match &step.op {
                StepOp::Conv { w, b, stride } => tape.conv3d(
                    slots[step.ins[0]],
                    param_ids[*w],
                    param_ids[*b],
                    *stride,
                    Padding::Same,
                )?,
                StepOp::Bn { gamma, beta, state } => tape.batch_norm(
                    slots[step.ins[0]],
                    param_ids[*gamma],
                    param_ids[*beta],
                    &mut self.bn_states[*state],
                    mode,
                )?,
                StepOp::Relu => tape.relu(slots[step.ins[0]]),
                StepOp::AvgPool2 => tape.avg_pool2(slots[step.ins[0]])?,
                StepOp::GlobalAvgPool => tape.global_avg_pool(slots[step.ins[0]])?,
                StepOp::Dense { w, b } => {
                    tape.dense(slots[step.ins[0]], param_ids[*w], param_ids[*b])?
                }
                StepOp::Add => tape.add(slots[step.ins[0]], slots[step.ins[1]])?,
                StepOp::Scale(s) => tape.scale(slots[step.ins[0]], T::from_f64(*s)),
                StepOp::Concat => {
                    let parts: Vec<TensorId> = step.ins.iter().map(|&i| slots[i]).collect();
                    tape.concat_channels(&parts)?
                }
            };
            if let Some(t) = step.tag {
                taps.push((t, id));
            }
            slots.push(id);
        }

        Ok(ForwardPass {
            output: *slots.last().expect("non-empty program"),
            input: input_id,
            param_ids,
            taps,
        })
    }

    /// Convenience inference: returns the output values only.
    pub fn infer(&mut self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, input, BnMode::Infer, false, false)?;
        Ok(tape.value(pass.output).clone())
    }
}

/// The f32 network used everywhere outside the gradient-check suite.
pub fn build_f32(spec: &ArchitectureSpec, seed: u64) -> Result<NetworkGraph<f32>> {
    build(spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic_in_spec_and_seed() {
        let spec = ArchitectureSpec {
            width_scale: 0.125,
            ..ArchitectureSpec::new(Family::Inception3D)
        };
        let a = build_f32(&spec, 9).unwrap();
        let b = build_f32(&spec, 9).unwrap();
        assert_eq!(a.count_parameters(), b.count_parameters());
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.data, pb.data);
        }
        let c = build_f32(&spec, 10).unwrap();
        assert_ne!(a.params()[0].data, c.params()[0].data);
    }

    #[test]
    fn param_names_are_unique() {
        for fam in Family::all() {
            let spec = ArchitectureSpec {
                width_scale: 0.125,
                ..ArchitectureSpec::new(fam)
            };
            let net = build_f32(&spec, 1).unwrap();
            let mut names: Vec<_> = net.params().iter().map(|p| p.name.clone()).collect();
            let total = names.len();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), total, "duplicate param names in {:?}", fam);
        }
    }
}
