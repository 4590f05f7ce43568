//! Shared-weight convolutional classifiers.
//!
//! A [`Model`] owns exactly one parameter set. The global (full image) and
//! local (patch) branches are two forward calls over the same parameters;
//! global average pooling makes the logits independent of the input size.

mod checkpoint;
mod pretrained;

use std::fmt;
use std::path::PathBuf;

use ndarray::{Array2, Array4, ArrayD, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut4, Ix1, Ix2, Ix4, IxDyn};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use pretrained::save_weights_safetensors;

use crate::error::{Error, Result};
use crate::nn::ops::{self, BnBatchStats, BnCache, ConvGeom, PoolCache};
use crate::nn::Real;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// ResNet-50 (bottleneck v1.5, torchvision parameter names).
    ResNet50,
    /// Stride-2 stem plus `blocks` conv-BN-ReLU-maxpool stages.
    TinyCnn { blocks: usize },
}

impl Arch {
    pub const DEFAULT_TINY_BLOCKS: usize = 4;

    /// Accepts `resnet50`, `tiny_cnn` and `tiny_cnn:<blocks>`.
    pub fn parse(id: &str) -> Result<Arch> {
        match id {
            "resnet50" => Ok(Arch::ResNet50),
            "tiny_cnn" => Ok(Arch::TinyCnn {
                blocks: Self::DEFAULT_TINY_BLOCKS,
            }),
            _ => {
                let blocks = id
                    .strip_prefix("tiny_cnn:")
                    .and_then(|b| b.parse::<usize>().ok())
                    .filter(|b| (1..=6).contains(b))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown architecture {id:?} (supported: resnet50, tiny_cnn, tiny_cnn:<1-6>)"
                        ))
                    })?;
                Ok(Arch::TinyCnn { blocks })
            }
        }
    }

    pub fn id(&self) -> String {
        match self {
            Arch::ResNet50 => "resnet50".into(),
            Arch::TinyCnn { blocks } if *blocks == Self::DEFAULT_TINY_BLOCKS => "tiny_cnn".into(),
            Arch::TinyCnn { blocks } => format!("tiny_cnn:{blocks}"),
        }
    }

    /// Total spatial downsampling before global pooling.
    pub fn downsample(&self) -> usize {
        match self {
            Arch::ResNet50 => 32,
            Arch::TinyCnn { blocks } => 1 << (blocks + 1),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Backbone weights from a safetensors file; the head is fresh.
    Pretrained(PathBuf),
    Random(u64),
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone, Copy)]
struct BatchNorm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
    relu: bool,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Bottleneck {
    c1: ConvBn,
    c2: ConvBn,
    c3: ConvBn,
    down: Option<ConvBn>,
}

#[derive(Debug, Clone)]
enum Body {
    Tiny { stem: ConvBn, blocks: Vec<ConvBn> },
    ResNet { stem: ConvBn, blocks: Vec<Bottleneck> },
}

#[derive(Debug, Clone)]
struct Net {
    body: Body,
    fc: Linear,
    feature_dim: usize,
}

const TINY_STEM_WIDTH: usize = 8;
const TINY_BASE_WIDTH: usize = 16;
const POOL2: ConvGeom = ConvGeom { kernel: 2, stride: 2, pad: 0 };
const POOL3: ConvGeom = ConvGeom { kernel: 3, stride: 2, pad: 1 };

/// Registers parameters in construction order and draws their initial
/// values (in `f64`, so `f32` and `f64` builds agree) from one seeded stream.
struct Builder {
    rng: rng::SeededRng,
    params: Vec<(String, ArrayD<f64>)>,
    buffers: Vec<(String, ArrayD<f64>)>,
}

impl Builder {
    fn param(&mut self, name: String, value: ArrayD<f64>) -> usize {
        self.params.push((name, value));
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, value: ArrayD<f64>) -> usize {
        self.buffers.push((name, value));
        self.buffers.len() - 1
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> ArrayD<f64> {
        let rng = &mut self.rng;
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng::uniform(rng, -bound, bound))
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Conv {
        let fan_in = (cin * kernel * kernel) as f64;
        let w = self.uniform(&[cout, cin, kernel, kernel], (6.0 / fan_in).sqrt());
        Conv {
            w: self.param(format!("{name}.weight"), w),
            geom: ConvGeom {
                kernel,
                stride,
                pad: kernel / 2,
            },
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BatchNorm {
        BatchNorm {
            gamma: self.param(format!("{name}.weight"), ArrayD::ones(IxDyn(&[c]))),
            beta: self.param(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[c]))),
            mean: self.buffer(format!("{name}.running_mean"), ArrayD::zeros(IxDyn(&[c]))),
            var: self.buffer(format!("{name}.running_var"), ArrayD::ones(IxDyn(&[c]))),
        }
    }

    fn conv_bn(
        &mut self,
        conv_name: &str,
        bn_name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        relu: bool,
    ) -> ConvBn {
        ConvBn {
            conv: self.conv(conv_name, cin, cout, kernel, stride),
            bn: self.bn(bn_name, cout),
            relu,
        }
    }

    fn linear(&mut self, name: &str, fan_in: usize, out: usize) -> Linear {
        let w = self.uniform(&[out, fan_in], 1.0 / (fan_in as f64).sqrt());
        Linear {
            w: self.param(format!("{name}.weight"), w),
            b: self.param(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out]))),
        }
    }
}

fn build_net(arch: Arch, num_classes: usize, b: &mut Builder) -> Net {
    match arch {
        Arch::TinyCnn { blocks } => {
            let stem = b.conv_bn("stem.conv", "stem.bn", (3, TINY_STEM_WIDTH), 3, 2, true);
            let mut cin = TINY_STEM_WIDTH;
            let mut layers = Vec::new();
            for i in 0..blocks {
                let cout = TINY_BASE_WIDTH << i;
                layers.push(b.conv_bn(
                    &format!("blocks.{i}.conv"),
                    &format!("blocks.{i}.bn"),
                    (cin, cout),
                    3,
                    1,
                    true,
                ));
                cin = cout;
            }
            let fc = b.linear("fc", cin, num_classes);
            Net {
                body: Body::Tiny { stem, blocks: layers },
                fc,
                feature_dim: cin,
            }
        }
        Arch::ResNet50 => {
            let stem = b.conv_bn("conv1", "bn1", (3, 64), 7, 2, true);
            let mut blocks = Vec::new();
            let mut cin = 64;
            for (stage, (&depth, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
                let cout = width * 4;
                for j in 0..depth {
                    let stride = if j == 0 && stage > 0 { 2 } else { 1 };
                    let p = format!("layer{}.{j}", stage + 1);
                    let c1 = b.conv_bn(&format!("{p}.conv1"), &format!("{p}.bn1"), (cin, width), 1, 1, true);
                    let c2 = b.conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), (width, width), 3, stride, true);
                    let c3 = b.conv_bn(&format!("{p}.conv3"), &format!("{p}.bn3"), (width, cout), 1, 1, false);
                    let down = (j == 0).then(|| {
                        b.conv_bn(
                            &format!("{p}.downsample.0"),
                            &format!("{p}.downsample.1"),
                            (cin, cout),
                            1,
                            stride,
                            false,
                        )
                    });
                    blocks.push(Bottleneck { c1, c2, c3, down });
                    cin = cout;
                }
            }
            let fc = b.linear("fc", cin, num_classes);
            Net {
                body: Body::ResNet { stem, blocks },
                fc,
                feature_dim: cin,
            }
        }
    }
}

/// Gradients aligned with [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T>(pub Vec<ArrayD<T>>);

impl<T: Real> Grads<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Grads(model.params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect())
    }

    fn mat4(&mut self, i: usize) -> ArrayViewMut4<'_, T> {
        self.0[i].view_mut().into_dimensionality::<Ix4>().expect("4-d parameter")
    }
}

/// Batch statistics of one batch-norm layer seen during a training forward.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    mean_buffer: usize,
    var_buffer: usize,
    stats: BnBatchStats<T>,
}

struct ConvBnCache<T> {
    input: Array4<T>,
    bn: BnCache<T>,
    out: Option<Array4<T>>,
}

struct BottleneckCache<T> {
    c1: ConvBnCache<T>,
    c2: ConvBnCache<T>,
    c3: ConvBnCache<T>,
    down: Option<ConvBnCache<T>>,
    out: Array4<T>,
}

enum BodyTape<T> {
    Tiny {
        stem: ConvBnCache<T>,
        blocks: Vec<(ConvBnCache<T>, PoolCache)>,
    },
    ResNet {
        stem: ConvBnCache<T>,
        pool: PoolCache,
        blocks: Vec<BottleneckCache<T>>,
    },
}

/// Everything a training forward keeps for the backward pass.
pub struct Tape<T> {
    body: BodyTape<T>,
    feature_hw: (usize, usize),
    pooled: Array2<T>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<T> Tape<T> {
    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    arch: Arch,
    num_classes: usize,
    class_names: Vec<String>,
    param_names: Vec<String>,
    params: Vec<ArrayD<T>>,
    buffer_names: Vec<String>,
    buffers: Vec<ArrayD<T>>,
    net: Net,
    low_precision: bool,
}

impl<T: Real> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.num_classes == other.num_classes
            && self.class_names == other.class_names
            && self.param_names == other.param_names
            && self.params == other.params
            && self.buffer_names == other.buffer_names
            && self.buffers == other.buffers
    }
}

/// Builds a classifier with a fresh `num_classes`-way head. Every layer is
/// trainable.
pub fn build_model<T: Real>(arch_id: &str, num_classes: usize, init: &Init) -> Result<Model<T>> {
    let arch = Arch::parse(arch_id)?;
    if num_classes < 1 {
        return Err(Error::Config("num_classes must be at least 1".into()));
    }
    let seed = match init {
        Init::Random(seed) => *seed,
        Init::Pretrained(_) => 0,
    };
    let mut b = Builder {
        rng: rng::seeded(seed),
        params: Vec::new(),
        buffers: Vec::new(),
    };
    let net = build_net(arch, num_classes, &mut b);
    let cast = |v: ArrayD<f64>| v.mapv(T::lit);
    let (param_names, params) = b.params.into_iter().map(|(n, v)| (n, cast(v))).unzip();
    let (buffer_names, buffers) = b.buffers.into_iter().map(|(n, v)| (n, cast(v))).unzip();
    let mut model = Model {
        arch,
        num_classes,
        class_names: (0..num_classes).map(|c| format!("class{c}")).collect(),
        param_names,
        params,
        buffer_names,
        buffers,
        net,
        low_precision: false,
    };
    if let Init::Pretrained(path) = init {
        pretrained::load_backbone_weights(&mut model, path)?;
    }
    Ok(model)
}

impl<T: Real> Model<T> {
    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn arch_id(&self) -> String {
        self.arch.id()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.num_classes {
            return Err(Error::Validation(format!(
                "{} class names for a {}-way model",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = names;
        Ok(())
    }

    pub fn params(&self) -> &[ArrayD<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn buffers(&self) -> &[ArrayD<T>] {
        &self.buffers
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Rounds conv inputs and weights to bfloat16 in every forward.
    pub fn set_low_precision(&mut self, on: bool) {
        self.low_precision = on;
    }

    pub fn low_precision(&self) -> bool {
        self.low_precision
    }

    /// The same model in another float type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let conv = |v: &ArrayD<T>| v.mapv(|x| U::lit(x.to_f64_lossy()));
        Model {
            arch: self.arch,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            param_names: self.param_names.clone(),
            params: self.params.iter().map(conv).collect(),
            buffer_names: self.buffer_names.clone(),
            buffers: self.buffers.iter().map(conv).collect(),
            net: self.net.clone(),
            low_precision: self.low_precision,
        }
    }

    fn p4(&self, i: usize) -> ArrayView4<'_, T> {
        self.params[i].view().into_dimensionality::<Ix4>().expect("4-d parameter")
    }

    fn p2(&self, i: usize) -> ArrayView2<'_, T> {
        self.params[i].view().into_dimensionality::<Ix2>().expect("2-d parameter")
    }

    fn p1(&self, i: usize) -> ArrayView1<'_, T> {
        self.params[i].view().into_dimensionality::<Ix1>().expect("1-d parameter")
    }

    fn b1(&self, i: usize) -> ArrayView1<'_, T> {
        self.buffers[i].view().into_dimensionality::<Ix1>().expect("1-d buffer")
    }

    pub fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        let ds = self.arch.downsample();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if h == 0 || w == 0 || h % ds != 0 || w % ds != 0 {
            return Err(Error::Shape(format!(
                "input size {h}x{w} is not a positive multiple of the {} downsample factor {ds}",
                self.arch
            )));
        }
        Ok(())
    }

    /// Eval-mode forward (batch norm uses running statistics).
    pub fn forward(&self, x: &Array4<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let mut f = Fwd { model: self, train: false, updates: Vec::new() };
        let (feat, _) = f.body(x.as_standard_layout().into_owned());
        let pooled = ops::global_avg_pool(&feat);
        Ok(ops::linear(&pooled, self.p2(self.net.fc.w), self.p1(self.net.fc.b)))
    }

    /// Train-mode forward (batch statistics) that records a [`Tape`].
    pub fn forward_train(&self, x: &Array4<T>) -> Result<(Array2<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut f = Fwd { model: self, train: true, updates: Vec::new() };
        let (feat, body) = f.body(x.as_standard_layout().into_owned());
        let (_, _, h, w) = feat.dim();
        let pooled = ops::global_avg_pool(&feat);
        let logits = ops::linear(&pooled, self.p2(self.net.fc.w), self.p1(self.net.fc.b));
        let tape = Tape {
            body: body.expect("train mode records a tape"),
            feature_hw: (h, w),
            pooled,
            bn_updates: f.updates,
        };
        Ok((logits, tape))
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(logits)`.
    pub fn backward(&self, tape: Tape<T>, dlogits: &Array2<T>, grads: &mut Grads<T>) {
        let fc = self.net.fc;
        let dpooled = {
            let (dw, db) = split_two(&mut grads.0, fc.w, fc.b);
            ops::linear_backward(
                &tape.pooled,
                self.p2(fc.w),
                dlogits,
                dw.view_mut().into_dimensionality::<Ix2>().expect("2-d"),
                db.view_mut().into_dimensionality::<Ix1>().expect("1-d"),
            )
        };
        let (h, w) = tape.feature_hw;
        let dfeat = ops::global_avg_pool_backward(&dpooled, h, w);
        match (&self.net.body, tape.body) {
            (Body::Tiny { stem, blocks }, BodyTape::Tiny { stem: stem_cache, blocks: caches }) => {
                let mut d = dfeat;
                for (layer, (cache, pool)) in blocks.iter().zip(caches).rev() {
                    let dpool = ops::max_pool_backward(&pool, &d);
                    d = self.conv_bn_backward(layer, cache, dpool, grads, true).expect("dx");
                }
                self.conv_bn_backward(stem, stem_cache, d, grads, false);
            }
            (
                Body::ResNet { stem, blocks },
                BodyTape::ResNet { stem: stem_cache, pool, blocks: caches },
            ) => {
                let mut d = dfeat;
                for (block, cache) in blocks.iter().zip(caches).rev() {
                    d = self.bottleneck_backward(block, cache, d, grads);
                }
                let dstem = ops::max_pool_backward(&pool, &d);
                self.conv_bn_backward(stem, stem_cache, dstem, grads, false);
            }
            _ => unreachable!("tape recorded by a different architecture"),
        }
    }

    /// Folds batch statistics from training forwards into the running
    /// statistics, in the given order.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            let (mean, var) = split_two(&mut self.buffers, u.mean_buffer, u.var_buffer);
            ops::update_running_stats(
                mean.view_mut().into_dimensionality::<Ix1>().expect("1-d"),
                var.view_mut().into_dimensionality::<Ix1>().expect("1-d"),
                &u.stats,
            );
        }
    }

    fn conv_bn_backward(
        &self,
        layer: &ConvBn,
        cache: ConvBnCache<T>,
        dy: Array4<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Array4<T>> {
        let dz = match &cache.out {
            Some(out) => ops::relu_backward(out, &dy),
            None => dy,
        };
        let dconv = {
            let (dgamma, dbeta) = split_two(&mut grads.0, layer.bn.gamma, layer.bn.beta);
            ops::batch_norm_backward(
                &cache.bn,
                self.p1(layer.bn.gamma),
                &dz,
                dgamma.view_mut().into_dimensionality::<Ix1>().expect("1-d"),
                dbeta.view_mut().into_dimensionality::<Ix1>().expect("1-d"),
            )
        };
        let w = self.conv_weight(layer.conv.w);
        ops::conv2d_backward(&cache.input, w.view(), layer.conv.geom, &dconv, grads.mat4(layer.conv.w), need_dx)
    }

    fn bottleneck_backward(
        &self,
        block: &Bottleneck,
        cache: BottleneckCache<T>,
        dy: Array4<T>,
        grads: &mut Grads<T>,
    ) -> Array4<T> {
        let dsum = ops::relu_backward(&cache.out, &dy);
        let d3 = self.conv_bn_backward(&block.c3, cache.c3, dsum.clone(), grads, true).expect("dx");
        let d2 = self.conv_bn_backward(&block.c2, cache.c2, d3, grads, true).expect("dx");
        let mut dx = self.conv_bn_backward(&block.c1, cache.c1, d2, grads, true).expect("dx");
        match (&block.down, cache.down) {
            (Some(down), Some(dcache)) => {
                dx += &self.conv_bn_backward(down, dcache, dsum, grads, true).expect("dx");
            }
            _ => dx += &dsum,
        }
        dx
    }

    fn conv_weight(&self, i: usize) -> Array4<T> {
        let mut w = self.p4(i).to_owned();
        if self.low_precision {
            ops::round_to_bf16(&mut w);
        }
        w
    }
}

fn split_two<A>(v: &mut [A], i: usize, j: usize) -> (&mut A, &mut A) {
    assert_ne!(i, j);
    if i < j {
        let (a, b) = v.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

struct Fwd<'a, T: Real> {
    model: &'a Model<T>,
    train: bool,
    updates: Vec<BnUpdate<T>>,
}

impl<T: Real> Fwd<'_, T> {
    fn conv_bn(&mut self, layer: &ConvBn, mut x: Array4<T>) -> (Array4<T>, Option<ConvBnCache<T>>) {
        let m = self.model;
        if m.low_precision {
            ops::round_to_bf16(&mut x);
        }
        let w = m.conv_weight(layer.conv.w);
        let z = ops::conv2d(&x, w.view(), layer.conv.geom);
        let (gamma, beta) = (m.p1(layer.bn.gamma), m.p1(layer.bn.beta));
        let (mut y, bn_cache) = if self.train {
            let (y, cache, stats) = ops::batch_norm_train(&z, gamma, beta);
            self.updates.push(BnUpdate {
                mean_buffer: layer.bn.mean,
                var_buffer: layer.bn.var,
                stats,
            });
            (y, Some(cache))
        } else {
            let y = ops::batch_norm_eval(&z, gamma, beta, m.b1(layer.bn.mean), m.b1(layer.bn.var));
            (y, None)
        };
        if layer.relu {
            ops::relu_inplace(&mut y);
        }
        let cache = bn_cache.map(|bn| ConvBnCache {
            input: x,
            bn,
            out: layer.relu.then(|| y.clone()),
        });
        (y, cache)
    }

    fn bottleneck(&mut self, block: &Bottleneck, x: Array4<T>) -> (Array4<T>, Option<BottleneckCache<T>>) {
        let (identity, down_cache) = match &block.down {
            Some(down) => self.conv_bn(down, x.clone()),
            None => (x.clone(), None),
        };
        let (h1, c1) = self.conv_bn(&block.c1, x);
        let (h2, c2) = self.conv_bn(&block.c2, h1);
        let (mut out, c3) = self.conv_bn(&block.c3, h2);
        out += &identity;
        ops::relu_inplace(&mut out);
        let cache = if self.train {
            Some(BottleneckCache {
                c1: c1.expect("train"),
                c2: c2.expect("train"),
                c3: c3.expect("train"),
                down: down_cache,
                out: out.clone(),
            })
        } else {
            None
        };
        (out, cache)
    }

    fn body(&mut self, x: Array4<T>) -> (Array4<T>, Option<BodyTape<T>>) {
        let net = &self.model.net;
        match &net.body {
            Body::Tiny { stem, blocks } => {
                let (mut h, stem_cache) = self.conv_bn(stem, x);
                let mut caches = Vec::with_capacity(blocks.len());
                for layer in blocks {
                    let (y, c) = self.conv_bn(layer, h);
                    let (pooled, pool_cache) = ops::max_pool(&y, POOL2);
                    if let Some(c) = c {
                        caches.push((c, pool_cache));
                    }
                    h = pooled;
                }
                let tape = stem_cache.map(|stem| BodyTape::Tiny { stem, blocks: caches });
                (h, tape)
            }
            Body::ResNet { stem, blocks } => {
                let (s, stem_cache) = self.conv_bn(stem, x);
                let (mut h, pool) = ops::max_pool(&s, POOL3);
                let mut caches = Vec::with_capacity(blocks.len());
                for block in blocks {
                    let (y, c) = self.bottleneck(block, h);
                    if let Some(c) = c {
                        caches.push(c);
                    }
                    h = y;
                }
                let tape = stem_cache.map(|stem| BodyTape::ResNet { stem, pool, blocks: caches });
                (h, tape)
            }
        }
    }
}
