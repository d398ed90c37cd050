use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{ParamId, ParamSet, Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnIds {
    pub wi: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerIds {
    pub attn_norm: ParamId,
    pub attn: AttnIds,
    pub ff_norm: ParamId,
    pub ff: FfnIds,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerIds {
    pub self_attn_norm: ParamId,
    pub self_attn: AttnIds,
    pub cross_attn_norm: ParamId,
    pub cross_attn: AttnIds,
    pub ff_norm: ParamId,
    pub ff: FfnIds,
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorIds {
    pub key_down: ParamId,
    pub key_up: ParamId,
    pub value_down: ParamId,
    pub value_up: ParamId,
}

#[derive(Clone, Debug)]
pub struct PrompterIds {
    pub global_prompt: ParamId,
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    /// One generator pair per encoder layer; empty in prompt-tuning mode.
    pub generators: Vec<GeneratorIds>,
}

#[derive(Clone, Debug)]
pub struct ModelIds {
    pub embedding: ParamId,
    pub enc_position: ParamId,
    pub enc_layers: Vec<EncoderLayerIds>,
    pub enc_final_norm: ParamId,
    pub dec_position: ParamId,
    pub dec_layers: Vec<DecoderLayerIds>,
    pub dec_final_norm: ParamId,
    pub prompter: Option<PrompterIds>,
}

/// Mini encoder-decoder plus, depending on the mode, the prompt generator.
#[derive(Clone, Debug)]
pub struct Model<F: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
    pub ids: ModelIds,
}

/// Name, shape and init std of every parameter, in canonical order.
pub fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff, v) = (c.d_model, c.d_ff, c.vocab_size);
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    add("shared.embedding".into(), vec![v, d], Init::Normal(1.0));
    add("encoder.position".into(), vec![c.max_len, d], Init::Normal(0.3));
    for i in 0..c.enc_layers {
        let p = format!("encoder.layers.{i}");
        add(format!("{p}.attn_norm"), vec![d], Init::Ones);
        for w in ["q", "k", "v", "o"] {
            add(format!("{p}.attn.{w}"), vec![d, d], lin(d));
        }
        add(format!("{p}.ff_norm"), vec![d], Init::Ones);
        add(format!("{p}.ff.wi"), vec![d, ff], lin(d));
        add(format!("{p}.ff.wo"), vec![ff, d], lin(ff));
    }
    add("encoder.final_norm".into(), vec![d], Init::Ones);
    add("decoder.position".into(), vec![c.max_len, d], Init::Normal(0.3));
    for i in 0..c.dec_layers {
        let p = format!("decoder.layers.{i}");
        add(format!("{p}.self_attn_norm"), vec![d], Init::Ones);
        for w in ["q", "k", "v", "o"] {
            add(format!("{p}.self_attn.{w}"), vec![d, d], lin(d));
        }
        add(format!("{p}.cross_attn_norm"), vec![d], Init::Ones);
        for w in ["q", "k", "v", "o"] {
            add(format!("{p}.cross_attn.{w}"), vec![d, d], lin(d));
        }
        add(format!("{p}.ff_norm"), vec![d], Init::Ones);
        add(format!("{p}.ff.wi"), vec![d, ff], lin(d));
        add(format!("{p}.ff.wo"), vec![ff, d], lin(ff));
    }
    add("decoder.final_norm".into(), vec![d], Init::Ones);
    if c.mode.has_slot_prompt() {
        add("prompter.global_prompt".into(), vec![c.prompt_len, d], Init::Normal(0.02));
        for w in ["q", "k", "v"] {
            add(format!("prompter.cross_attn.{w}"), vec![d, d], lin(d));
        }
        if c.mode == super::Mode::Prompter {
            let r = c.bottleneck;
            for i in 0..c.enc_layers {
                let p = format!("prompter.generators.{i}");
                add(format!("{p}.key_down"), vec![d, r], lin(d));
                add(format!("{p}.key_up"), vec![r, d], lin(r));
                add(format!("{p}.value_down"), vec![d, r], lin(d));
                add(format!("{p}.value_up"), vec![r, d], lin(r));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Ones,
    Normal(f64),
}

impl<F: Real> Model<F> {
    /// Seeded initialization; identical seeds give bitwise-identical models.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Ones => {
                    let n = shape.iter().product();
                    Tensor::new(shape, vec![F::one(); n])?
                }
                Init::Normal(std) => Tensor::randn(shape, std, &mut rng),
            };
            params.register(name, t)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking names and shapes against
    /// the layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(shape_err!(
                "config expects {} parameters, found {}",
                expected.len(),
                params.len()
            ));
        }
        for ((name, shape, _), (_, got_name, t)) in expected.iter().zip(params.iter()) {
            if name != got_name {
                return Err(shape_err!("expected parameter {name}, found {got_name}"));
            }
            if shape.as_slice() != t.shape() {
                return Err(shape_err!("parameter {name}: expected shape {:?}, found {:?}", shape, t.shape()));
            }
        }
        let ids = ModelIds::resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model { config: self.config.clone(), params: self.params.cast(), ids: self.ids.clone() }
    }
}

impl ModelIds {
    fn resolve<F: Real>(c: &ModelConfig, p: &ParamSet<F>) -> Result<Self> {
        let id = |name: String| p.id(&name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")));
        let attn = |prefix: String| -> Result<AttnIds> {
            Ok(AttnIds {
                q: id(format!("{prefix}.q"))?,
                k: id(format!("{prefix}.k"))?,
                v: id(format!("{prefix}.v"))?,
                o: id(format!("{prefix}.o"))?,
            })
        };
        let enc_layers = (0..c.enc_layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                Ok(EncoderLayerIds {
                    attn_norm: id(format!("{p}.attn_norm"))?,
                    attn: attn(format!("{p}.attn"))?,
                    ff_norm: id(format!("{p}.ff_norm"))?,
                    ff: FfnIds { wi: id(format!("{p}.ff.wi"))?, wo: id(format!("{p}.ff.wo"))? },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dec_layers = (0..c.dec_layers)
            .map(|i| {
                let p = format!("decoder.layers.{i}");
                Ok(DecoderLayerIds {
                    self_attn_norm: id(format!("{p}.self_attn_norm"))?,
                    self_attn: attn(format!("{p}.self_attn"))?,
                    cross_attn_norm: id(format!("{p}.cross_attn_norm"))?,
                    cross_attn: attn(format!("{p}.cross_attn"))?,
                    ff_norm: id(format!("{p}.ff_norm"))?,
                    ff: FfnIds { wi: id(format!("{p}.ff.wi"))?, wo: id(format!("{p}.ff.wo"))? },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let prompter = if c.mode.has_slot_prompt() {
            let generators = if c.mode == super::Mode::Prompter {
                (0..c.enc_layers)
                    .map(|i| {
                        let p = format!("prompter.generators.{i}");
                        Ok(GeneratorIds {
                            key_down: id(format!("{p}.key_down"))?,
                            key_up: id(format!("{p}.key_up"))?,
                            value_down: id(format!("{p}.value_down"))?,
                            value_up: id(format!("{p}.value_up"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Some(PrompterIds {
                global_prompt: id("prompter.global_prompt".into())?,
                q: id("prompter.cross_attn.q".into())?,
                k: id("prompter.cross_attn.k".into())?,
                v: id("prompter.cross_attn.v".into())?,
                generators,
            })
        } else {
            None
        };
        Ok(Self {
            embedding: id("shared.embedding".into())?,
            enc_position: id("encoder.position".into())?,
            enc_layers,
            enc_final_norm: id("encoder.final_norm".into())?,
            dec_position: id("decoder.position".into())?,
            dec_layers,
            dec_final_norm: id("decoder.final_norm".into())?,
            prompter,
        })
    }
}
