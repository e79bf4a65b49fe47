use funit_autodiff::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdaInParams, ContentCode, GeneratorConfig, StyleCode, NORM_EPS};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::nn::{Bound, Conv2d, Linear, ParamStore};

#[derive(Clone, Debug)]
struct ResBlock {
    first: Conv2d,
    second: Conv2d,
}

/// Translation generator: content encoder, averaging style encoder, MLP
/// regressing AdaIN parameters, and the AdaIN decoder.
///
/// Inference methods take `&self` and build a private tape per call, so a
/// shared generator can serve concurrent callers.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    content_stem: Conv2d,
    content_down: Vec<Conv2d>,
    content_res: Vec<ResBlock>,
    style_stem: Conv2d,
    style_down: Vec<Conv2d>,
    style_proj: Linear,
    mlp: Vec<Linear>,
    decoder_res: Vec<ResBlock>,
    decoder_up: Vec<Conv2d>,
    decoder_out: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let base = config.base_channels;
        let cin = config.input_channels;
        let cc = config.content_channels();

        let content_stem = Conv2d::new(&mut p, "content.stem", cin, base, 7, 1, 3, &mut rng);
        let content_down = (0..config.n_downsample)
            .map(|i| {
                let c = base << i;
                Conv2d::new(&mut p, &format!("content.down{i}"), c, 2 * c, 4, 2, 1, &mut rng)
            })
            .collect();
        let content_res = (0..config.n_content_res_blocks)
            .map(|i| ResBlock {
                first: Conv2d::new(&mut p, &format!("content.res{i}.conv0"), cc, cc, 3, 1, 1, &mut rng),
                second: Conv2d::new(&mut p, &format!("content.res{i}.conv1"), cc, cc, 3, 1, 1, &mut rng),
            })
            .collect();

        let style_stem = Conv2d::new(&mut p, "style.stem", cin, base, 7, 1, 3, &mut rng);
        let style_down = (0..config.n_downsample)
            .map(|i| {
                let c = base << i;
                Conv2d::new(&mut p, &format!("style.down{i}"), c, 2 * c, 4, 2, 1, &mut rng)
            })
            .collect();
        let style_proj = Linear::new(&mut p, "style.proj", cc, config.style_dim, &mut rng);

        let hidden = config.mlp_hidden();
        let out_len = config.adain_param_len();
        let mlp: Vec<Linear> = (0..config.n_mlp_layers)
            .map(|i| {
                let fan_in = if i == 0 { config.style_dim } else { hidden };
                let fan_out = if i + 1 == config.n_mlp_layers { out_len } else { hidden };
                Linear::new(&mut p, &format!("mlp.{i}"), fan_in, fan_out, &mut rng)
            })
            .collect();
        // Scales start at 1 so the freshly initialized decoder passes
        // normalized features through instead of zeroing them.
        let last_bias = p.get_mut(mlp.last().expect("n_mlp_layers >= 1").bias);
        for chunk in last_bias.data_mut().chunks_mut(2 * cc) {
            chunk[..cc].fill(1.0);
        }

        let decoder_res = (0..config.n_adain_res_blocks)
            .map(|i| ResBlock {
                first: Conv2d::new(&mut p, &format!("decoder.res{i}.conv0"), cc, cc, 3, 1, 1, &mut rng),
                second: Conv2d::new(&mut p, &format!("decoder.res{i}.conv1"), cc, cc, 3, 1, 1, &mut rng),
            })
            .collect();
        let decoder_up = (0..config.n_downsample)
            .map(|i| {
                let c = cc >> i;
                Conv2d::new(&mut p, &format!("decoder.up{i}"), c, c / 2, 5, 1, 2, &mut rng)
            })
            .collect();
        let decoder_out = Conv2d::new(&mut p, "decoder.out", base, cin, 7, 1, 3, &mut rng);

        Ok(Self {
            config,
            params: p,
            content_stem,
            content_down,
            content_res,
            style_stem,
            style_down,
            style_proj,
            mlp,
            decoder_res,
            decoder_up,
            decoder_out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    // ---- differentiable building blocks -------------------------------

    /// `(N, C, S, S) -> (N, C_content, s, s)`.
    pub fn content_forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let mut h = self.content_stem.forward(p, x).instance_norm(NORM_EPS).relu();
        for conv in &self.content_down {
            h = conv.forward(p, h).instance_norm(NORM_EPS).relu();
        }
        for block in &self.content_res {
            let r = block.first.forward(p, h).instance_norm(NORM_EPS).relu();
            let r = block.second.forward(p, r).instance_norm(NORM_EPS);
            h = h + r;
        }
        h
    }

    /// Per-image style codes, `(M, C, S, S) -> (M, style_dim)`.
    pub fn style_forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Var<'t> {
        let mut h = self.style_stem.forward(p, y).relu();
        for conv in &self.style_down {
            h = conv.forward(p, h).relu();
        }
        self.style_proj.forward(p, h.spatial_mean())
    }

    /// Flat AdaIN parameters, `(N, style_dim) -> (N, adain_param_len)`.
    pub fn mlp_forward<'t>(&self, p: &Bound<'t>, style: Var<'t>) -> Var<'t> {
        let mut h = style;
        for (i, layer) in self.mlp.iter().enumerate() {
            h = layer.forward(p, h);
            if i + 1 < self.mlp.len() {
                h = h.relu();
            }
        }
        h
    }

    /// `(N, C_content, s, s)` code and `(N, adain_param_len)` parameters to
    /// an `(N, C, S, S)` image in `[-1, 1]`.
    pub fn decode_forward<'t>(&self, p: &Bound<'t>, code: Var<'t>, adain: Var<'t>) -> Var<'t> {
        let cc = self.config.content_channels();
        let modulate = |h: Var<'t>, layer: usize| {
            let scale = adain.narrow_columns(2 * cc * layer, cc);
            let shift = adain.narrow_columns(2 * cc * layer + cc, cc);
            h.instance_norm(NORM_EPS).channel_affine(scale, shift)
        };
        let mut h = code;
        for (i, block) in self.decoder_res.iter().enumerate() {
            let r = modulate(block.first.forward(p, h), 2 * i).relu();
            let r = modulate(block.second.forward(p, r), 2 * i + 1);
            h = h + r;
        }
        for conv in &self.decoder_up {
            h = conv.forward(p, h.upsample_nearest(2)).relu();
        }
        self.decoder_out.forward(p, h).tanh()
    }

    /// Batched translation: `content` is `(N, C, S, S)`, `styles` holds `k`
    /// consecutive style images per sample, `(N * k, C, S, S)`.
    pub fn translate_forward<'t>(&self, p: &Bound<'t>, content: Var<'t>, styles: Var<'t>, k: usize) -> Var<'t> {
        let code = self.content_forward(p, content);
        let style = self.style_forward(p, styles).group_mean(k);
        let adain = self.mlp_forward(p, style);
        self.decode_forward(p, code, adain)
    }

    // ---- inference ----------------------------------------------------

    pub fn encode_content(&self, x: &ImageTensor) -> Result<ContentCode> {
        self.config.check_image(x)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let batch = tape.constant(ImageTensor::batch(std::slice::from_ref(x))?);
        let code = self.content_forward(&p, batch).value();
        Ok(ContentCode(code.index_axis0(0)))
    }

    pub fn encode_style_one(&self, y: &ImageTensor) -> Result<StyleCode> {
        Ok(self
            .encode_style_batch(std::slice::from_ref(y))?
            .pop()
            .expect("one code per image"))
    }

    /// Style code of every image in `ys`, computed as one batch.
    pub fn encode_style_batch(&self, ys: &[ImageTensor]) -> Result<Vec<StyleCode>> {
        if ys.is_empty() {
            return Ok(Vec::new());
        }
        for y in ys {
            self.config.check_image(y)?;
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let batch = tape.constant(ImageTensor::batch(ys)?);
        let codes = self.style_forward(&p, batch).value();
        Ok(codes
            .data()
            .chunks(self.config.style_dim)
            .map(|c| StyleCode(c.to_vec()))
            .collect())
    }

    /// Mean style code of a same-class style set.
    pub fn encode_style(&self, ys: &[ImageTensor]) -> Result<StyleCode> {
        if ys.is_empty() {
            return Err(Error::Config("style set must contain at least one image".into()));
        }
        StyleCode::mean_of(&self.encode_style_batch(ys)?)
    }

    pub fn compute_adain_params(&self, style: &StyleCode) -> Result<AdaInParams> {
        if style.0.len() != self.config.style_dim {
            return Err(Error::shape(
                format!("style code of length {}", self.config.style_dim),
                style.0.len(),
            ));
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let s = tape.constant(Tensor::from_vec(&[1, self.config.style_dim], style.0.clone()).expect("style shape"));
        let flat = self.mlp_forward(&p, s).value();
        AdaInParams::from_flat(flat.data(), self.config.content_channels())
    }

    pub fn decode(&self, code: &ContentCode, params: &AdaInParams) -> Result<ImageTensor> {
        let cc = self.config.content_channels();
        let s = self.config.code_size();
        if code.0.shape() != [cc, s, s] {
            return Err(Error::shape(
                format!("content code [{cc}, {s}, {s}]"),
                format!("{:?}", code.0.shape()),
            ));
        }
        if params.layers.len() != self.config.adain_layers()
            || params.layers.iter().any(|l| l.scale.len() != cc || l.shift.len() != cc)
        {
            return Err(Error::shape(
                format!("{} AdaIN layers of width {cc}", self.config.adain_layers()),
                format!("{} layers", params.layers.len()),
            ));
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let code = tape.constant(code.0.reshape(&[1, cc, s, s]).expect("code shape"));
        let flat = params.to_flat();
        let adain = tape.constant(Tensor::from_vec(&[1, flat.len()], flat).expect("adain shape"));
        let out = self.decode_forward(&p, code, adain).value();
        ImageTensor::new(out.index_axis0(0))
    }

    /// `decode(encode_content(x), compute_adain_params(encode_style(ys)))`.
    pub fn translate(&self, x: &ImageTensor, ys: &[ImageTensor]) -> Result<ImageTensor> {
        let code = self.encode_content(x)?;
        let style = self.encode_style(ys)?;
        let params = self.compute_adain_params(&style)?;
        self.decode(&code, &params)
    }
}

pub(crate) fn check_same_layout(current: &ParamStore, incoming: &ParamStore) -> Result<()> {
    if current.len() != incoming.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            current.len(),
            incoming.len()
        )));
    }
    for ((name_a, a), (name_b, b)) in current.iter().zip(incoming.iter()) {
        if name_a != name_b || a.shape() != b.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter mismatch: {name_a} {:?} vs {name_b} {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}
