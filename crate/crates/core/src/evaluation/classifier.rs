use autograd::{Adam, AdamConfig, ConvSpec, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Channels of the first convolution; the second has twice as many.
    pub width: usize,
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            width: 16,
            hidden: 64,
        }
    }
}

/// Two stride-2 5×5 convolutions with ReLU, then two fully connected layers.
pub struct Classifier {
    params: ParamStore<f32>,
    ids: [ParamId; 8],
}

impl Classifier {
    pub fn new(channels: usize, size: usize, cfg: &ClassifierConfig) -> Result<Self> {
        if size % 4 != 0 {
            return Err(Error::Protocol(format!("classifier input side {size} is not a multiple of 4")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let mut he = |name: &str, shape: &[usize], fan_in: usize| {
            let std = (2.0 / fan_in as f32).sqrt();
            let t = Tensor::from_fn(shape, |_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                z * std
            });
            params.insert(name, t)
        };
        let (w1, w2) = (cfg.width, 2 * cfg.width);
        let flat = w2 * (size / 4) * (size / 4);
        let c1 = he("conv1.weight", &[w1, channels, 5, 5], channels * 25);
        let c2 = he("conv2.weight", &[w2, w1, 5, 5], w1 * 25);
        let f1 = he("fc1.weight", &[cfg.hidden, flat], flat);
        let f2 = he("fc2.weight", &[cfg.classes, cfg.hidden], cfg.hidden);
        let b1 = params.insert("conv1.bias", Tensor::zeros(&[w1]));
        let b2 = params.insert("conv2.bias", Tensor::zeros(&[w2]));
        let fb1 = params.insert("fc1.bias", Tensor::zeros(&[cfg.hidden]));
        let fb2 = params.insert("fc2.bias", Tensor::zeros(&[cfg.classes]));
        Ok(Self {
            params,
            ids: [c1, b1, c2, b2, f1, fb1, f2, fb2],
        })
    }

    fn logits(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        let p: Vec<Var> = self.ids.iter().map(|&id| g.param(&self.params, id)).collect();
        let spec = ConvSpec::new(2, 2);
        let h = g.conv2d(x, p[0], Some(p[1]), spec)?;
        let h = g.relu(h);
        let h = g.conv2d(h, p[2], Some(p[3]), spec)?;
        let h = g.relu(h);
        let n = g.shape(h)[0];
        let flat: usize = g.shape(h)[1..].iter().product();
        let h = g.reshape(h, &[n, flat])?;
        let h = g.linear(h, p[4], Some(p[5]))?;
        let h = g.relu(h);
        Ok(g.linear(h, p[6], Some(p[7]))?)
    }

    /// Trains on labeled images with a seeded shuffle each epoch.
    pub fn fit(&mut self, images: &[Image], cfg: &ClassifierConfig) -> Result<()> {
        let labels = labels_of(images)?;
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &self.ids,
            &self.params,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..images.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Image> = chunk.iter().map(|&i| &images[i]).collect();
                let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut g = Graph::new(self.ids);
                let x = g.constant(Image::stack::<f32>(&batch)?);
                let logits = self.logits(&mut g, x)?;
                let loss = g.softmax_cross_entropy(logits, &ys)?;
                let grads = g.backward(loss)?;
                opt.step(&mut self.params, &grads);
            }
        }
        Ok(())
    }

    pub fn predict(&self, images: &[Image]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let batch: Vec<&Image> = chunk.iter().collect();
            let mut g = Graph::inference();
            let x = g.constant(Image::stack::<f32>(&batch)?);
            let logits = self.logits(&mut g, x)?;
            let t = g.value(logits);
            let k = t.shape()[1];
            for row in t.data().chunks(k) {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold((0, f32::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                out.push(arg);
            }
        }
        Ok(out)
    }

    /// Percentage of correctly classified labeled images.
    pub fn accuracy(&self, images: &[Image]) -> Result<f64> {
        let labels = labels_of(images)?;
        let pred = self.predict(images)?;
        let hits = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok(100.0 * hits as f64 / images.len() as f64)
    }
}

fn labels_of(images: &[Image]) -> Result<Vec<usize>> {
    if images.is_empty() {
        return Err(Error::Protocol("no labeled images".into()));
    }
    images
        .iter()
        .enumerate()
        .map(|(i, img)| img.label().ok_or_else(|| Error::Protocol(format!("image {i} has no label"))))
        .collect()
}

/// Trains a fresh classifier on `train` and scores it on `test`.
pub fn train_and_score(train: &[Image], test: &[Image], cfg: &ClassifierConfig) -> Result<f64> {
    let first = train
        .first()
        .ok_or_else(|| Error::Protocol("empty classifier training set".into()))?;
    let mut clf = Classifier::new(first.channels(), first.height(), cfg)?;
    clf.fit(train, cfg)?;
    clf.accuracy(test)
}
