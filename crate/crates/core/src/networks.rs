//! The nine networks: content encoders, attribute encoders, generators,
//! domain discriminators and the content discriminator.
//!
//! Parameters live in one [`ParamStore`]. The last layer of the two content
//! encoders and the first layer of the two generators are single entries
//! with a second name registered as an alias.

use std::collections::BTreeMap;
use std::fmt;

use autograd::{ConvSpec, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::config::ArchConfig;
use crate::error::{Error, Result};
use crate::image::{Domain, Image};

/// Lower clamp of the log-variance head. At this bound the sample equals `mu`.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

const LEAK: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Network {
    ContentEncoder(Domain),
    AttributeEncoder(Domain),
    Generator(Domain),
    DomainDiscriminator(Domain),
    ContentDiscriminator,
}

impl Network {
    pub const ALL: [Network; 9] = [
        Network::ContentEncoder(Domain::X),
        Network::ContentEncoder(Domain::Y),
        Network::AttributeEncoder(Domain::X),
        Network::AttributeEncoder(Domain::Y),
        Network::Generator(Domain::X),
        Network::Generator(Domain::Y),
        Network::DomainDiscriminator(Domain::X),
        Network::DomainDiscriminator(Domain::Y),
        Network::ContentDiscriminator,
    ];

    pub fn group(self) -> Group {
        match self {
            Network::ContentEncoder(_) | Network::AttributeEncoder(_) | Network::Generator(_) => {
                Group::EncoderGenerator
            }
            Network::DomainDiscriminator(_) => Group::DomainDiscriminators,
            Network::ContentDiscriminator => Group::ContentDiscriminator,
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Network::ContentEncoder(d) => write!(f, "content_encoder.{}", d.tag()),
            Network::AttributeEncoder(d) => write!(f, "attribute_encoder.{}", d.tag()),
            Network::Generator(d) => write!(f, "generator.{}", d.tag()),
            Network::DomainDiscriminator(d) => write!(f, "discriminator.{}", d.tag()),
            Network::ContentDiscriminator => write!(f, "content_discriminator"),
        }
    }
}

/// Parameter groups updated by separate optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    EncoderGenerator,
    DomainDiscriminators,
    ContentDiscriminator,
}

// ---------------------------------------------------------------- codes

/// Spatial feature map `[content_channels, h/4, w/4]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCode {
    features: Tensor<f32>,
}

impl ContentCode {
    pub fn new(features: Tensor<f32>) -> Result<Self> {
        if features.shape().len() != 3 {
            return Err(Error::Shape {
                context: "content code".into(),
                expected: vec![0, 0, 0],
                actual: features.shape().to_vec(),
            });
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("content code".into()));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn shape(&self) -> &[usize] {
        self.features.shape()
    }

    fn to_batch<T: Scalar>(&self) -> Tensor<T> {
        let mut shape = vec![1];
        shape.extend_from_slice(self.features.shape());
        self.features.cast::<T>().reshape(&shape)
    }
}

/// A vector in one domain's attribute space, with its posterior when it was
/// produced by an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeCode {
    pub value: Vec<f32>,
    pub mu: Option<Vec<f32>>,
    pub logvar: Option<Vec<f32>>,
    pub domain: Domain,
}

impl AttributeCode {
    pub fn from_value(value: Vec<f32>, domain: Domain) -> Self {
        Self {
            value,
            mu: None,
            logvar: None,
            domain,
        }
    }

    /// `z ~ N(0, I)`.
    pub fn sample_prior<R: Rng + ?Sized>(dim: usize, domain: Domain, rng: &mut R) -> Self {
        let value = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        Self::from_value(value, domain)
    }

    /// Reparameterized posterior sample `mu + exp(logvar / 2) · eps`.
    pub fn from_posterior(mu: Vec<f32>, logvar: Vec<f32>, eps: &[f32], domain: Domain) -> Self {
        let value = reparameterize_values(&mu, &logvar, eps);
        Self {
            value,
            mu: Some(mu),
            logvar: Some(logvar),
            domain,
        }
    }

    /// The posterior mean as a deterministic code (the value itself for prior samples).
    pub fn mean(&self) -> AttributeCode {
        Self::from_value(self.mu.clone().unwrap_or_else(|| self.value.clone()), self.domain)
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    /// `self + t·(other − self)`, keeping `self`'s domain.
    pub fn lerp(&self, other: &AttributeCode, t: f32) -> AttributeCode {
        let value = self
            .value
            .iter()
            .zip(&other.value)
            .map(|(a, b)| a + t * (b - a))
            .collect();
        Self::from_value(value, self.domain)
    }

    fn to_batch<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(&[1, self.value.len()], self.value.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
    }
}

/// Elementwise `mu + exp(logvar / 2)·eps`; a log-variance at the lower clamp
/// yields exactly `mu`.
pub fn reparameterize_values(mu: &[f32], logvar: &[f32], eps: &[f32]) -> Vec<f32> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| {
            if (lv as f64) <= LOGVAR_MIN {
                m
            } else {
                m + (lv * 0.5).exp() * e
            }
        })
        .collect()
}

// ---------------------------------------------------------------- layers

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    spec: ConvSpec,
    transpose: bool,
}

impl Conv {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        Ok(if self.transpose {
            g.conv_transpose2d(x, w, b, self.spec)?
        } else {
            g.conv2d(x, w, b, self.spec)?
        })
    }
}

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        Ok(g.linear(x, w, Some(b))?)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    first: Conv,
    second: Conv,
}

#[derive(Clone, Copy, Debug)]
enum Norm {
    Instance,
    Layer,
}

impl Norm {
    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let groups = match self {
            Norm::Instance => g.shape(x)[1],
            Norm::Layer => 1,
        };
        Ok(g.group_norm(x, groups)?)
    }
}

impl ResBlock {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, norm: Norm) -> Result<Var> {
        let h = self.first.forward(g, store, x)?;
        let h = norm.apply(g, h)?;
        let h = g.relu(h);
        let h = self.second.forward(g, store, h)?;
        let h = norm.apply(g, h)?;
        Ok(g.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
struct ContentEncoder {
    stem: [Conv; 3],
    blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
struct AttributeEncoder {
    convs: Vec<Conv>,
    mu: Dense,
    logvar: Dense,
}

#[derive(Clone, Debug)]
struct Generator {
    fusion: Conv,
    blocks: Vec<ResBlock>,
    up: [Conv; 2],
    out: Conv,
}

#[derive(Clone, Debug)]
struct Discriminator {
    convs: Vec<Conv>,
    head: Dense,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    prefix: String,
    created: Vec<ParamId>,
}

impl<T: Scalar> Builder<'_, T> {
    fn insert(&mut self, name: &str, shape: &[usize], std: f32) -> ParamId {
        let numel: usize = shape.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut self.rng);
                T::from_f64_lossy((z * std) as f64)
            })
            .collect();
        let id = self.store.insert(format!("{}.{name}", self.prefix), Tensor::new(shape, data));
        self.created.push(id);
        id
    }

    fn zeros(&mut self, name: &str, len: usize) -> ParamId {
        let id = self.store.insert(format!("{}.{name}", self.prefix), Tensor::zeros(&[len]));
        self.created.push(id);
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, bias: bool) -> Conv {
        let std = (2.0 / (c_in * k * k) as f32).sqrt();
        let weight = self.insert(&format!("{name}.weight"), &[c_out, c_in, k, k], std);
        let bias = bias.then(|| self.zeros(&format!("{name}.bias"), c_out));
        Conv {
            weight,
            bias,
            spec: ConvSpec::new(stride, padding),
            transpose: false,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_t(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, bias: bool) -> Conv {
        let fan_in = (c_in * k * k) as f32 / (stride * stride) as f32;
        let weight = self.insert(&format!("{name}.weight"), &[c_in, c_out, k, k], (2.0 / fan_in).sqrt());
        let bias = bias.then(|| self.zeros(&format!("{name}.bias"), c_out));
        Conv {
            weight,
            bias,
            spec: ConvSpec::new(stride, padding),
            transpose: true,
        }
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize) -> Dense {
        let std = (1.0 / n_in as f32).sqrt();
        Dense {
            weight: self.insert(&format!("{name}.weight"), &[n_out, n_in], std),
            bias: self.zeros(&format!("{name}.bias"), n_out),
        }
    }

    fn res_block(&mut self, name: &str, c: usize) -> ResBlock {
        ResBlock {
            first: self.conv(&format!("{name}.conv1"), c, c, 3, 1, 1, false),
            second: self.conv(&format!("{name}.conv2"), c, c, 3, 1, 1, false),
        }
    }

    /// Registers the parameters of `layer` under this network's names too.
    fn alias_conv(&mut self, name: &str, layer: &Conv) {
        self.store.alias(format!("{}.{name}.weight", self.prefix), layer.weight);
        self.created.push(layer.weight);
        if let Some(b) = layer.bias {
            self.store.alias(format!("{}.{name}.bias", self.prefix), b);
            self.created.push(b);
        }
    }
}

// ---------------------------------------------------------------- model

/// All nine networks and their parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    arch: ArchConfig,
    params: ParamStore<T>,
    content: [ContentEncoder; 2],
    attribute: [AttributeEncoder; 2],
    generator: [Generator; 2],
    discriminator: [Discriminator; 2],
    content_discriminator: Discriminator,
    network_params: BTreeMap<Network, Vec<ParamId>>,
    ignore_attribute: bool,
}

fn builder<'a, T: Scalar>(net: Network, rng: &mut ChaCha8Rng, store: &'a mut ParamStore<T>) -> Builder<'a, T> {
    Builder {
        store,
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
        prefix: net.to_string(),
        created: Vec::new(),
    }
}

fn two<L>(v: Vec<L>) -> [L; 2] {
    v.try_into().unwrap_or_else(|_| unreachable!("one network per domain"))
}

fn check_finite<T: Scalar>(g: &Graph<T>, v: Var, layer: impl FnOnce() -> String) -> Result<Var> {
    if g.value(v).all_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("activation of {}", layer())))
    }
}

impl<T: Scalar> Model<T> {
    /// He-normal weights and zero biases drawn from a ChaCha8 stream seeded by `seed`.
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut network_params = BTreeMap::new();
        let nf = arch.base_channels;
        let cc = arch.content_channels;
        let ch = arch.channels;
        let ok = arch.outer_kernel;
        let a = arch.attr_dim;
        let dc = arch.disc_channels;

        // Content encoders; domain Y reuses X's last layer.
        let mut content: Vec<ContentEncoder> = Vec::new();
        for d in [Domain::X, Domain::Y] {
            let net = Network::ContentEncoder(d);
            let mut b = builder(net, &mut rng, &mut store);
            let shared_last = content.first().cloned();
            let last_is_block = arch.res_blocks > 0;
            let c1 = b.conv("conv1", ch, nf, ok, 1, ok / 2, false);
            let c2 = b.conv("conv2", nf, 2 * nf, 4, 2, 1, false);
            let c3 = match (&shared_last, last_is_block) {
                (Some(x), false) => {
                    b.alias_conv("conv3", &x.stem[2]);
                    x.stem[2].clone()
                }
                _ => b.conv("conv3", 2 * nf, cc, 4, 2, 1, false),
            };
            let mut blocks = Vec::new();
            for i in 0..arch.res_blocks {
                let name = format!("res{i}");
                let last = i + 1 == arch.res_blocks;
                match (&shared_last, last) {
                    (Some(x), true) => {
                        let blk = x.blocks[i].clone();
                        b.alias_conv(&format!("{name}.conv1"), &blk.first);
                        b.alias_conv(&format!("{name}.conv2"), &blk.second);
                        blocks.push(blk);
                    }
                    _ => blocks.push(b.res_block(&name, cc)),
                }
            }
            network_params.insert(net, b.created);
            content.push(ContentEncoder {
                stem: [c1, c2, c3],
                blocks,
            });
        }

        let mut attribute = Vec::new();
        for d in [Domain::X, Domain::Y] {
            let net = Network::AttributeEncoder(d);
            let mut b = builder(net, &mut rng, &mut store);
            let widths = [ch, nf, nf, 2 * nf, 2 * nf];
            let convs = (0..4)
                .map(|i| b.conv(&format!("conv{}", i + 1), widths[i], widths[i + 1], 3, 2, 1, true))
                .collect();
            let mu = b.dense("mu", 2 * nf, a);
            let logvar = b.dense("logvar", 2 * nf, a);
            network_params.insert(net, b.created);
            attribute.push(AttributeEncoder { convs, mu, logvar });
        }

        // Generators; domain Y reuses X's fusion layer.
        let mut generator: Vec<Generator> = Vec::new();
        for d in [Domain::X, Domain::Y] {
            let net = Network::Generator(d);
            let mut b = builder(net, &mut rng, &mut store);
            let fusion = match generator.first() {
                Some(x) => {
                    b.alias_conv("fusion", &x.fusion);
                    x.fusion.clone()
                }
                None => b.conv("fusion", cc + a, cc, 3, 1, 1, false),
            };
            let blocks = (0..arch.res_blocks).map(|i| b.res_block(&format!("res{i}"), cc)).collect();
            let up = [
                b.conv_t("up1", cc, 2 * nf, 4, 2, 1, false),
                b.conv_t("up2", 2 * nf, nf, 4, 2, 1, false),
            ];
            let out = b.conv_t("out", nf, ch, ok, 1, ok / 2, true);
            network_params.insert(net, b.created);
            generator.push(Generator { fusion, blocks, up, out });
        }

        let mut discriminator = Vec::new();
        for d in [Domain::X, Domain::Y] {
            let net = Network::DomainDiscriminator(d);
            let mut b = builder(net, &mut rng, &mut store);
            let widths = [ch, dc, 2 * dc, 4 * dc, 4 * dc];
            let convs = (0..4)
                .map(|i| b.conv(&format!("conv{}", i + 1), widths[i], widths[i + 1], 3, 2, 1, true))
                .collect();
            let head = b.dense("head", 4 * dc, 1);
            network_params.insert(net, b.created);
            discriminator.push(Discriminator { convs, head });
        }

        let net = Network::ContentDiscriminator;
        let mut b = builder(net, &mut rng, &mut store);
        let widths = [cc, dc, dc, dc];
        let convs = (0..3)
            .map(|i| b.conv(&format!("conv{}", i + 1), widths[i], widths[i + 1], 3, 2, 1, true))
            .collect();
        let head = b.dense("head", dc, 1);
        network_params.insert(net, b.created);
        let content_discriminator = Discriminator { convs, head };

        Ok(Self {
            arch: arch.clone(),
            params: store,
            content: two(content),
            attribute: two(attribute),
            generator: two(generator),
            discriminator: two(discriminator),
            content_discriminator,
            network_params,
            ignore_attribute: false,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Generators receive a zero attribute vector regardless of their input.
    pub fn set_ignore_attribute(&mut self, on: bool) {
        self.ignore_attribute = on;
    }

    pub fn ignores_attribute(&self) -> bool {
        self.ignore_attribute
    }

    /// Parameter ids of one network, including shared ones.
    pub fn network_params(&self, net: Network) -> &[ParamId] {
        &self.network_params[&net]
    }

    /// Deduplicated parameter ids of a group.
    pub fn group_params(&self, group: Group) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Network::ALL
            .iter()
            .filter(|n| n.group() == group)
            .flat_map(|n| self.network_params[n].iter().copied())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// SHA-256 over the raw bytes of the given parameters.
    pub fn digest(&self, ids: &[ParamId]) -> String {
        let mut h = Sha256::new();
        for &id in ids {
            for v in self.params.get(id).data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sets the final linear layer of every discriminator to zero, so all
    /// scores start at exactly 0.5.
    pub fn zero_discriminator_heads(&mut self) {
        let heads = [
            &self.discriminator[0].head,
            &self.discriminator[1].head,
            &self.content_discriminator.head,
        ];
        for h in heads {
            for id in [h.weight, h.bias] {
                self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Same networks with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
            content: self.content.clone(),
            attribute: self.attribute.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            content_discriminator: self.content_discriminator.clone(),
            network_params: self.network_params.clone(),
            ignore_attribute: self.ignore_attribute,
        }
    }

    fn check_image_input(&self, g: &Graph<T>, x: Var, what: &str) -> Result<()> {
        let a = &self.arch;
        let s = g.shape(x);
        if s.len() != 4 || s[1] != a.channels || s[2] != a.image_size || s[3] != a.image_size {
            return Err(Error::Shape {
                context: what.to_string(),
                expected: vec![s.first().copied().unwrap_or(1), a.channels, a.image_size, a.image_size],
                actual: s.to_vec(),
            });
        }
        Ok(())
    }

    /// `E^c_d`: `[n, c, h, w]` image batch to `[n, content_channels, h/4, w/4]`.
    pub fn content_encode(&self, g: &mut Graph<T>, x: Var, domain: Domain) -> Result<Var> {
        let net = Network::ContentEncoder(domain);
        self.check_image_input(g, x, &net.to_string())?;
        let enc = &self.content[domain.index()];
        let mut h = x;
        for (i, conv) in enc.stem.iter().enumerate() {
            h = conv.forward(g, &self.params, h)?;
            h = Norm::Instance.apply(g, h)?;
            h = g.relu(h);
            h = check_finite(g, h, || format!("{net}.conv{}", i + 1))?;
        }
        for (i, blk) in enc.blocks.iter().enumerate() {
            h = blk.forward(g, &self.params, h, Norm::Instance)?;
            h = check_finite(g, h, || format!("{net}.res{i}"))?;
        }
        Ok(h)
    }

    /// `E^a_d`: image batch to `(mu, logvar)`, each `[n, attr_dim]`; the
    /// log-variance is clamped to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub fn attribute_encode(&self, g: &mut Graph<T>, x: Var, domain: Domain) -> Result<(Var, Var)> {
        let net = Network::AttributeEncoder(domain);
        self.check_image_input(g, x, &net.to_string())?;
        let enc = &self.attribute[domain.index()];
        let mut h = x;
        for (i, conv) in enc.convs.iter().enumerate() {
            h = conv.forward(g, &self.params, h)?;
            h = g.relu(h);
            h = check_finite(g, h, || format!("{net}.conv{}", i + 1))?;
        }
        let pooled = g.mean_spatial(h)?;
        let mu = enc.mu.forward(g, &self.params, pooled)?;
        let mu = check_finite(g, mu, || format!("{net}.mu"))?;
        let lv = enc.logvar.forward(g, &self.params, pooled)?;
        let lv = check_finite(g, lv, || format!("{net}.logvar"))?;
        let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, lv))
    }

    /// `G_d`: content code `[n, cc, s, s]` and attribute `[n, attr_dim]` to an image batch.
    pub fn generate(&self, g: &mut Graph<T>, content: Var, attr: Var, domain: Domain) -> Result<Var> {
        let net = Network::Generator(domain);
        let a = &self.arch;
        let s = a.content_size();
        let cs = g.shape(content).to_vec();
        if cs.len() != 4 || cs[1] != a.content_channels || cs[2] != s || cs[3] != s {
            return Err(Error::Shape {
                context: format!("{net} content input"),
                expected: vec![cs.first().copied().unwrap_or(1), a.content_channels, s, s],
                actual: cs,
            });
        }
        let zs = g.shape(attr).to_vec();
        if zs != [cs[0], a.attr_dim] {
            return Err(Error::Shape {
                context: format!("{net} attribute input"),
                expected: vec![cs[0], a.attr_dim],
                actual: zs,
            });
        }
        let attr = if self.ignore_attribute {
            g.constant(Tensor::zeros(&zs))
        } else {
            attr
        };
        let gen = &self.generator[domain.index()];
        let h = g.concat_tile(content, attr)?;
        let h = gen.fusion.forward(g, &self.params, h)?;
        let h = Norm::Layer.apply(g, h)?;
        let mut h = g.relu(h);
        h = check_finite(g, h, || format!("{net}.fusion"))?;
        for (i, blk) in gen.blocks.iter().enumerate() {
            h = blk.forward(g, &self.params, h, Norm::Layer)?;
            h = check_finite(g, h, || format!("{net}.res{i}"))?;
        }
        for (i, up) in gen.up.iter().enumerate() {
            h = up.forward(g, &self.params, h)?;
            h = Norm::Layer.apply(g, h)?;
            h = g.relu(h);
            h = check_finite(g, h, || format!("{net}.up{}", i + 1))?;
        }
        let h = gen.out.forward(g, &self.params, h)?;
        let h = g.tanh(h);
        check_finite(g, h, || format!("{net}.out"))
    }

    fn discriminate(&self, g: &mut Graph<T>, d: &Discriminator, x: Var, net: Network) -> Result<Var> {
        let mut h = x;
        for (i, conv) in d.convs.iter().enumerate() {
            h = conv.forward(g, &self.params, h)?;
            h = g.leaky_relu(h, LEAK);
            h = check_finite(g, h, || format!("{net}.conv{}", i + 1))?;
        }
        let pooled = g.mean_spatial(h)?;
        let logit = d.head.forward(g, &self.params, pooled)?;
        let p = g.sigmoid(logit);
        check_finite(g, p, || format!("{net}.head"))
    }

    /// `D_d`: probability `[n, 1]` that each image is a real member of `domain`.
    pub fn discriminate_domain(&self, g: &mut Graph<T>, x: Var, domain: Domain) -> Result<Var> {
        let net = Network::DomainDiscriminator(domain);
        self.check_image_input(g, x, &net.to_string())?;
        self.discriminate(g, &self.discriminator[domain.index()], x, net)
    }

    /// `D^c`: probability `[n, 1]` that each content code came from domain X.
    pub fn discriminate_content(&self, g: &mut Graph<T>, code: Var) -> Result<Var> {
        let net = Network::ContentDiscriminator;
        let a = &self.arch;
        let s = g.shape(code).to_vec();
        if s.len() != 4 || s[1] != a.content_channels {
            return Err(Error::Shape {
                context: net.to_string(),
                expected: vec![1, a.content_channels, a.content_size(), a.content_size()],
                actual: s,
            });
        }
        self.discriminate(g, &self.content_discriminator, code, net)
    }
}

/// Graph form of the reparameterization: `mu + exp(logvar / 2) ⊙ eps`, with
/// `eps` zeroed where the log-variance sits at its lower clamp.
pub fn reparameterize<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var, eps: &Tensor<T>) -> Result<Var> {
    let masked = g.value(logvar).zip_map(eps, |lv, e| {
        if lv.as_f64() <= LOGVAR_MIN {
            T::zero()
        } else {
            e
        }
    });
    let e = g.constant(masked);
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, e)?;
    Ok(g.add(mu, noise)?)
}

fn to_f32_vec<T: Scalar>(t: &Tensor<T>) -> Vec<f32> {
    t.data().iter().map(|v| v.as_f64() as f32).collect()
}

/// Value-level access to encoders and generators.
pub trait Translator {
    fn attr_dim(&self) -> usize;

    /// `E^c` for the image's own domain.
    fn encode_content(&self, img: &Image) -> Result<ContentCode>;

    /// `E^a` posterior; the returned value is the mean.
    fn encode_posterior(&self, img: &Image) -> Result<AttributeCode>;

    fn generate(&self, content: &ContentCode, attr: &AttributeCode, domain: Domain) -> Result<Image>;

    /// Posterior sample with `eps ~ N(0, I)` drawn from `rng`.
    fn encode_attribute<R: Rng + ?Sized>(&self, img: &Image, rng: &mut R) -> Result<AttributeCode>
    where
        Self: Sized,
    {
        let post = self.encode_posterior(img)?;
        let eps: Vec<f32> = (0..post.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let mu = post.mu.clone().unwrap_or(post.value.clone());
        let logvar = post.logvar.clone().unwrap_or_else(|| vec![LOGVAR_MIN as f32; mu.len()]);
        Ok(AttributeCode::from_posterior(mu, logvar, &eps, post.domain))
    }
}

impl<T: Scalar> Translator for Model<T> {
    fn attr_dim(&self) -> usize {
        self.arch.attr_dim
    }

    fn encode_content(&self, img: &Image) -> Result<ContentCode> {
        let mut g = Graph::inference();
        let x = g.constant(img.to_batch());
        let c = self.content_encode(&mut g, x, img.domain())?;
        let t = g.value(c);
        let shape = t.shape()[1..].to_vec();
        ContentCode::new(Tensor::new(&shape, to_f32_vec(t)))
    }

    fn encode_posterior(&self, img: &Image) -> Result<AttributeCode> {
        let mut g = Graph::inference();
        let x = g.constant(img.to_batch());
        let (mu, lv) = self.attribute_encode(&mut g, x, img.domain())?;
        let mu = to_f32_vec(g.value(mu));
        let lv = to_f32_vec(g.value(lv));
        Ok(AttributeCode {
            value: mu.clone(),
            mu: Some(mu),
            logvar: Some(lv),
            domain: img.domain(),
        })
    }

    fn generate(&self, content: &ContentCode, attr: &AttributeCode, domain: Domain) -> Result<Image> {
        let mut g = Graph::inference();
        let c = g.constant(content.to_batch());
        let z = g.constant(attr.to_batch());
        let out = Model::generate(self, &mut g, c, z, domain)?;
        let t = g.value(out);
        let shape = t.shape()[1..].to_vec();
        Image::from_clamped(Tensor::new(&shape, to_f32_vec(t)), domain)
    }
}

impl<T: Scalar> Model<T> {
    /// `D_d` score of a single image.
    pub fn domain_score(&self, img: &Image, domain: Domain) -> Result<f64> {
        let mut g = Graph::inference();
        let x = g.constant(img.to_batch());
        let p = self.discriminate_domain(&mut g, x, domain)?;
        Ok(g.value(p).item().as_f64())
    }

    /// `D^c` score of a single content code.
    pub fn content_score(&self, code: &ContentCode) -> Result<f64> {
        let mut g = Graph::inference();
        let c = g.constant(code.to_batch());
        let p = self.discriminate_content(&mut g, c)?;
        Ok(g.value(p).item().as_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchConfig {
        ArchConfig {
            image_size: 16,
            channels: 3,
            attr_dim: 8,
            content_channels: 6,
            base_channels: 4,
            disc_channels: 4,
            res_blocks: 2,
            outer_kernel: 7,
        }
    }

    #[test]
    fn shared_layers_are_single_slots() {
        let m = Model::<f32>::new(&small(), 1).unwrap();
        let p = m.params();
        for suffix in ["res1.conv1.weight", "res1.conv2.weight"] {
            let x = p.resolve(&format!("content_encoder.x.{suffix}")).unwrap();
            let y = p.resolve(&format!("content_encoder.y.{suffix}")).unwrap();
            assert_eq!(x, y);
        }
        let x = p.resolve("content_encoder.x.res0.conv1.weight").unwrap();
        let y = p.resolve("content_encoder.y.res0.conv1.weight").unwrap();
        assert_ne!(x, y);
        assert_eq!(
            p.resolve("generator.x.fusion.weight").unwrap(),
            p.resolve("generator.y.fusion.weight").unwrap()
        );
        assert_eq!(p.aliases().len(), 3);
    }

    #[test]
    fn without_res_blocks_the_last_conv_is_shared() {
        let mut a = small();
        a.res_blocks = 0;
        let m = Model::<f32>::new(&a, 1).unwrap();
        assert_eq!(
            m.params().resolve("content_encoder.x.conv3.weight").unwrap(),
            m.params().resolve("content_encoder.y.conv3.weight").unwrap()
        );
    }

    #[test]
    fn groups_partition_the_store() {
        let m = Model::<f32>::new(&small(), 3).unwrap();
        let mut all: Vec<ParamId> = [Group::EncoderGenerator, Group::DomainDiscriminators, Group::ContentDiscriminator]
            .iter()
            .flat_map(|&g| m.group_params(g))
            .collect();
        all.sort();
        assert_eq!(all, m.params().ids().collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::<f32>::new(&small(), 9).unwrap();
        let b = Model::<f32>::new(&small(), 9).unwrap();
        let c = Model::<f32>::new(&small(), 10).unwrap();
        let ids: Vec<_> = a.params().ids().collect();
        assert_eq!(a.digest(&ids), b.digest(&ids));
        assert_ne!(a.digest(&ids), c.digest(&ids));
    }

    #[test]
    fn lower_clamp_gives_the_mean() {
        let v = reparameterize_values(&[0.3, -1.0], &[LOGVAR_MIN as f32, 0.0], &[5.0, 2.0]);
        assert_eq!(v[0], 0.3);
        assert_eq!(v[1], 1.0);
    }

    #[test]
    fn generator_rejects_wrong_content_shape() {
        let m = Model::<f32>::new(&small(), 1).unwrap();
        let mut g = Graph::inference();
        let c = g.constant(Tensor::zeros(&[1, 5, 4, 4]));
        let z = g.constant(Tensor::zeros(&[1, 8]));
        assert!(matches!(m.generate(&mut g, c, z, Domain::X), Err(Error::Shape { .. })));
    }
}
