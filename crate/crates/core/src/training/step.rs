use autograd::{Adam, AdamConfig, AdamState, Graph, ParamId, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{
    build_adversarial, build_translation, content_discriminator_loss, domain_discriminator_loss, weighted_total,
    StepNoise,
};
use crate::config::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{LossReport, LossWeights};
use crate::networks::{Group, Model};

pub fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: 1e-8,
        clip_norm: config.grad_clip,
    }
}

/// Parameters, optimizer moments and the noise stream of a run.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar> {
    pub model: Model<T>,
    pub(crate) opt_eg: Adam<T>,
    pub(crate) opt_d: Adam<T>,
    pub(crate) opt_c: Adam<T>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) step: u64,
    weights: LossWeights,
    variant: Variant,
    d_steps: usize,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh parameters seeded by `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let model = Model::new(&config.arch, config.seed)?;
        Ok(Self::from_model(model, config))
    }

    pub fn from_model(mut model: Model<T>, config: &TrainConfig) -> Self {
        model.set_ignore_attribute(config.variant == Variant::AttributeIgnored);
        let adam = adam_config(config);
        let opt = |g: Group, m: &Model<T>| Adam::new(adam, &m.group_params(g), m.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Self {
            opt_eg: opt(Group::EncoderGenerator, &model),
            opt_d: opt(Group::DomainDiscriminators, &model),
            opt_c: opt(Group::ContentDiscriminator, &model),
            model,
            rng,
            step: 0,
            weights: config.weights,
            variant: config.variant,
            d_steps: config.d_steps,
        }
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn optimizer_states(&self) -> [(&'static str, &Adam<T>); 3] {
        [("eg", &self.opt_eg), ("d", &self.opt_d), ("c", &self.opt_c)]
    }

    pub(crate) fn set_optimizer_state(&mut self, name: &str, state: AdamState<T>) -> Result<()> {
        let opt = match name {
            "eg" => &mut self.opt_eg,
            "d" => &mut self.opt_d,
            "c" => &mut self.opt_c,
            _ => return Err(Error::Checkpoint(format!("unknown optimizer `{name}`"))),
        };
        opt.set_state(state);
        Ok(())
    }

    fn with_content_discriminator(&self) -> bool {
        self.variant != Variant::NoContentDiscriminator
    }

    /// Draws this step's noise from the run's stream.
    pub fn sample_noise(&mut self, batch: usize) -> StepNoise<T> {
        StepNoise::sample(&mut self.rng, batch, self.model.arch().attr_dim)
    }

    /// One alternating update on batches `x` (domain X) and `y` (domain Y).
    pub fn train_step(&mut self, x: &[&Image], y: &[&Image]) -> Result<LossReport> {
        let xb = Image::stack::<T>(x)?;
        let yb = Image::stack::<T>(y)?;
        let noise = self.sample_noise(x.len());
        self.train_step_with_noise(&xb, &yb, &noise)
    }

    /// The three sub-updates, in order: domain discriminators on real vs.
    /// first-stage fakes, the content discriminator on detached codes, then
    /// encoders and generators on the weighted objective.
    pub fn train_step_with_noise(&mut self, xb: &Tensor<T>, yb: &Tensor<T>, noise: &StepNoise<T>) -> Result<LossReport> {
        let step = self.step + 1;
        self.update(xb, yb, noise, step).map_err(|e| match e {
            Error::NonFinite(term) => Error::Diverged { step, term },
            e => e,
        })
    }

    fn update(&mut self, xb: &Tensor<T>, yb: &Tensor<T>, noise: &StepNoise<T>, step: u64) -> Result<LossReport> {
        let eg_ids = self.model.group_params(Group::EncoderGenerator);
        let mut g = Graph::new(eg_ids.iter().copied());
        let x = g.constant(xb.clone());
        let y = g.constant(yb.clone());
        let t = build_translation(&self.model, &mut g, x, y, noise)?;

        // Domain discriminators.
        let fakes = (g.value(t.u).clone(), g.value(t.v).clone());
        let mut d_report = None;
        for _ in 0..self.d_steps {
            let ids = self.model.group_params(Group::DomainDiscriminators);
            let mut gd = Graph::new(ids);
            let (dx, dy) = (gd.constant(xb.clone()), gd.constant(yb.clone()));
            let (du, dv) = (gd.constant(fakes.0.clone()), gd.constant(fakes.1.clone()));
            let (lx, ly, sat) = domain_discriminator_loss(&self.model, &mut gd, dx, dy, du, dv)?;
            let total = gd.add(lx, ly)?;
            let vals = (gd.value(lx).item().as_f64(), gd.value(ly).item().as_f64(), sat);
            if !vals.0.is_finite() || !vals.1.is_finite() {
                return Err(Error::Diverged {
                    step,
                    term: if vals.0.is_finite() { "d_y" } else { "d_x" }.into(),
                });
            }
            d_report.get_or_insert(vals);
            let grads = gd.backward(total)?;
            self.opt_d.step(self.model.params_mut(), &grads);
        }
        let (d_x, d_y, mut saturated) = d_report.unwrap_or((0.0, 0.0, false));

        // Content discriminator.
        let mut d_c = 0.0;
        if self.with_content_discriminator() {
            let ids = self.model.group_params(Group::ContentDiscriminator);
            let mut gc = Graph::new(ids);
            let cx = gc.constant(g.value(t.c_x).clone());
            let cy = gc.constant(g.value(t.c_y).clone());
            let (l, sat) = content_discriminator_loss(&self.model, &mut gc, cx, cy)?;
            d_c = gc.value(l).item().as_f64();
            if !d_c.is_finite() {
                return Err(Error::Diverged { step, term: "d_c".into() });
            }
            saturated |= sat;
            let grads = gc.backward(l)?;
            self.opt_c.step(self.model.params_mut(), &grads);
        }

        // Encoders and generators, scored by the updated discriminators.
        let adv = build_adversarial(&self.model, &mut g, &t, self.with_content_discriminator())?;
        saturated |= adv.saturated;
        let (total, terms) = weighted_total(&mut g, &t, &adv, &self.weights)?;
        let report = LossReport::new(terms, &self.weights, d_x, d_y, d_c, saturated);
        if let Some(term) = report.first_non_finite() {
            return Err(Error::Diverged {
                step,
                term: term.into(),
            });
        }
        let grads = g.backward(total)?;
        self.opt_eg.step(self.model.params_mut(), &grads);
        if !self.model.params().all_finite() {
            return Err(Error::Diverged {
                step,
                term: "parameters".into(),
            });
        }
        self.step = step;
        Ok(report)
    }

    /// The encoder/generator objective on a batch without updating anything.
    pub fn generator_objective(&self, xb: &Tensor<T>, yb: &Tensor<T>, noise: &StepNoise<T>) -> Result<LossReport> {
        let mut g = Graph::inference();
        let x = g.constant(xb.clone());
        let y = g.constant(yb.clone());
        let t = build_translation(&self.model, &mut g, x, y, noise)?;
        let adv = build_adversarial(&self.model, &mut g, &t, self.with_content_discriminator())?;
        let (_, terms) = weighted_total(&mut g, &t, &adv, &self.weights)?;
        Ok(LossReport::new(terms, &self.weights, 0.0, 0.0, 0.0, adv.saturated))
    }

    /// Ids updated by each optimizer.
    pub fn optimizer_params(&self) -> [Vec<ParamId>; 3] {
        [
            self.opt_eg.params().to_vec(),
            self.opt_d.params().to_vec(),
            self.opt_c.params().to_vec(),
        ]
    }
}
