use super::layers::{self, Tensor};
use super::{loss_perception, loss_velocity, LossWeights, Mode, NetConfig};
use crate::error::{Error, Result};
use crate::events::Bem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Depth output floor added after the softplus, meters.
const DEPTH_FLOOR: f64 = 0.01;
/// Initial depth the output bias is set to produce, meters.
const INIT_DEPTH: f64 = 5.0;

/// Parameter group: the depth predictor or the velocity head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Theta,
    Phi,
}

/// One named tensor inside `theta` or `phi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub group: Group,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weight and bias location of one layer. Bias directly follows the weight.
#[derive(Debug, Clone, Copy)]
struct Layer {
    group: Group,
    off: usize,
    nw: usize,
    nb: usize,
}

impl Layer {
    fn wb<'a>(&self, p: &'a ModelParams) -> (&'a [f64], &'a [f64]) {
        let v = match self.group {
            Group::Theta => &p.theta,
            Group::Phi => &p.phi,
        };
        v[self.off..self.off + self.nw + self.nb].split_at(self.nw)
    }

    fn wb_mut<'a>(&self, g: &'a mut Gradient) -> (&'a mut [f64], &'a mut [f64]) {
        let v = match self.group {
            Group::Theta => &mut g.theta,
            Group::Phi => &mut g.phi,
        };
        v[self.off..self.off + self.nw + self.nb].split_at_mut(self.nw)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    enc1: Layer,
    enc2: Layer,
    rec_z: Option<Layer>,
    rec_c: Option<Layer>,
    dec1: Layer,
    dec2: Layer,
    head: Layer,
    fc1: Layer,
    fc2: Layer,
}

/// `(name, group, weight shape, fan_in, fan_out)` for every layer, in storage order.
fn layer_specs(cfg: &NetConfig) -> Vec<(&'static str, Group, Vec<usize>, usize, usize)> {
    let (c1, c2, cd, ch) = (cfg.enc1_channels, cfg.enc2_channels, cfg.dec_channels, cfg.head_channels);
    let conv = |name, g, o: usize, i: usize| (name, g, vec![o, i, 3, 3], i * 9, o * 9);
    let mut v = vec![conv("enc1", Group::Theta, c1, 1), conv("enc2", Group::Theta, c2, c1)];
    if cfg.recurrent {
        v.push(conv("rec_z", Group::Theta, c2, 2 * c2));
        v.push(conv("rec_c", Group::Theta, c2, 2 * c2));
    }
    v.push(conv("dec1", Group::Theta, cd, c2 + c1));
    v.push(conv("dec2", Group::Theta, 1, cd + 1));
    v.push(conv("head", Group::Phi, ch, 1));
    let pooled = ch * cfg.head_bins;
    v.push(("fc1", Group::Phi, vec![cfg.head_hidden, pooled], pooled, cfg.head_hidden));
    v.push(("fc2", Group::Phi, vec![1, cfg.head_hidden], cfg.head_hidden, 1));
    v
}

/// Trainable parameters: `theta` (encoder, recurrent cell, decoder) and `phi`
/// (velocity head), with a layout mapping names to offsets and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ModelParams {
    /// Zero-filled parameters for `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Self::layout_for(cfg);
        let size = |g| {
            layout
                .iter()
                .filter(|e| e.group == g)
                .map(|e| e.len())
                .sum::<usize>()
        };
        Ok(Self {
            config: *cfg,
            theta: vec![0.0; size(Group::Theta)],
            phi: vec![0.0; size(Group::Phi)],
        })
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases,
    /// except the depth output bias which starts at a plausible depth.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = layer_specs(cfg);
        let layers = p.layers();
        for (name, g, shape, fan_in, fan_out) in specs {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            let off = p
                .layout()
                .into_iter()
                .find(|e| e.name == format!("{}.weight", name))
                .map(|e| e.offset)
                .expect("layer in layout");
            let v = match g {
                Group::Theta => &mut p.theta,
                Group::Phi => &mut p.phi,
            };
            for w in &mut v[off..off + n] {
                *w = rng.gen_range(-a..a);
            }
        }
        let (off, nw) = (layers.dec2.off, layers.dec2.nw);
        p.theta[off + nw] = layers::softplus_inverse(INIT_DEPTH - DEPTH_FLOOR);
        Ok(p)
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        Self::layout_for(&self.config)
    }

    fn layout_for(cfg: &NetConfig) -> Vec<LayoutEntry> {
        let mut out = Vec::new();
        let (mut t, mut f) = (0usize, 0usize);
        for (name, g, shape, _, _) in layer_specs(cfg) {
            let nb = shape[0];
            let cursor = match g {
                Group::Theta => &mut t,
                Group::Phi => &mut f,
            };
            let nw: usize = shape.iter().product();
            out.push(LayoutEntry {
                name: format!("{}.weight", name),
                group: g,
                offset: *cursor,
                shape,
            });
            out.push(LayoutEntry {
                name: format!("{}.bias", name),
                group: g,
                offset: *cursor + nw,
                shape: vec![nb],
            });
            *cursor += nw + nb;
        }
        out
    }

    fn layers(&self) -> Layers {
        let layout = self.layout();
        let get = |name: &str| {
            let w = layout.iter().find(|e| e.name == format!("{}.weight", name))?;
            Some(Layer {
                group: w.group,
                off: w.offset,
                nw: w.len(),
                nb: w.shape[0],
            })
        };
        Layers {
            enc1: get("enc1").unwrap(),
            enc2: get("enc2").unwrap(),
            rec_z: get("rec_z"),
            rec_c: get("rec_c"),
            dec1: get("dec1").unwrap(),
            dec2: get("dec2").unwrap(),
            head: get("head").unwrap(),
            fc1: get("fc1").unwrap(),
            fc2: get("fc2").unwrap(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.theta.len() + self.phi.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.phi).all(|v| v.is_finite())
    }

    /// Named slice of `theta` or `phi`.
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        let e = self.layout().into_iter().find(|e| e.name == name)?;
        let v = match e.group {
            Group::Theta => &self.theta,
            Group::Phi => &self.phi,
        };
        Some(&v[e.offset..e.offset + e.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.layout().into_iter().find(|e| e.name == name)?;
        let v = match e.group {
            Group::Theta => &mut self.theta,
            Group::Phi => &mut self.phi,
        };
        Some(&mut v[e.offset..e.offset + e.len()])
    }
}

/// Gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            theta: vec![0.0; p.theta.len()],
            phi: vec![0.0; p.phi.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += b;
        }
        for (a, b) in self.phi.iter_mut().zip(&other.phi) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.theta.iter_mut().chain(self.phi.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().chain(&self.phi).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Hidden state of the recurrent cell; `None` means all zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecurrentState {
    pub hidden: Option<Tensor>,
}

impl RecurrentState {
    pub fn zeros() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Row-major depth, same size as the input mask, meters.
    pub depth: Vec<f64>,
    pub v_y: f64,
    pub state: RecurrentState,
}

/// Losses and gradient of one training step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub l_p: f64,
    pub l_v: f64,
    pub objective: f64,
    pub gradient: Gradient,
    pub state: RecurrentState,
    pub v_y: f64,
}

struct Cache {
    x: Tensor,
    a1: Tensor,
    e1: Tensor,
    a2: Tensor,
    e2: Tensor,
    rec: Option<RecCache>,
    bottleneck: Tensor,
    d1in: Tensor,
    a3: Tensor,
    d2in: Tensor,
    a4: Tensor,
    depth: Vec<f64>,
    head: HeadCache,
}

struct RecCache {
    u: Tensor,
    h_prev: Tensor,
    z: Tensor,
    cand: Tensor,
}

struct HeadCache {
    q: Tensor,
    a5: Tensor,
    pooled: Vec<f64>,
    a6: Vec<f64>,
    s6: Vec<f64>,
    v: f64,
}

fn silu_t(t: &Tensor) -> Tensor {
    t.map(layers::silu)
}

fn input_tensor(cfg: &NetConfig, bem: &Bem) -> Result<Tensor> {
    if bem.width != cfg.input_width || bem.height != cfg.input_height {
        return Err(Error::shape(
            format!("{}x{} mask", cfg.input_width, cfg.input_height),
            format!("{}x{}", bem.width, bem.height),
        ));
    }
    Ok(Tensor::from_vec(1, bem.height, bem.width, bem.to_f64()))
}

fn check_state(cfg: &NetConfig, state: &RecurrentState) -> Result<()> {
    if let Some(h) = &state.hidden {
        let want = (cfg.enc2_channels, cfg.input_height / 4, cfg.input_width / 4);
        if (h.c, h.h, h.w) != want {
            return Err(Error::shape(format!("{:?} hidden state", want), format!("{:?}", (h.c, h.h, h.w))));
        }
    }
    Ok(())
}

fn head_forward(p: &ModelParams, l: &Layers, depth: &[f64]) -> HeadCache {
    let cfg = &p.config;
    let q = Tensor::from_vec(1, cfg.input_height, cfg.input_width, depth.iter().map(|d| 1.0 / d).collect());
    let (w, b) = l.head.wb(p);
    let a5 = layers::conv3x3(&q, w, b, cfg.head_channels);
    let pooled = layers::column_pool(&silu_t(&a5), cfg.head_bins);
    let (w, b) = l.fc1.wb(p);
    let a6 = layers::linear(&pooled, w, b);
    let s6: Vec<f64> = a6.iter().map(|&v| layers::silu(v)).collect();
    let (w, b) = l.fc2.wb(p);
    let v = layers::linear(&s6, w, b)[0].tanh();
    HeadCache {
        q,
        a5,
        pooled,
        a6,
        s6,
        v,
    }
}

/// Returns the gradient with respect to the head's depth input.
fn head_backward(p: &ModelParams, l: &Layers, c: &HeadCache, g_v: f64, grad: &mut Gradient, want_depth: bool) -> Option<Vec<f64>> {
    let cfg = &p.config;
    let g_a7 = [g_v * (1.0 - c.v * c.v)];
    let (w, _) = l.fc2.wb(p);
    let (gw, gb) = l.fc2.wb_mut(grad);
    let g_s6 = layers::linear_backward(&c.s6, w, &g_a7, gw, gb);
    let g_a6: Vec<f64> = g_s6.iter().zip(&c.a6).map(|(g, &a)| g * layers::silu_grad(a)).collect();
    let (w, _) = l.fc1.wb(p);
    let (gw, gb) = l.fc1.wb_mut(grad);
    let g_pooled = layers::linear_backward(&c.pooled, w, &g_a6, gw, gb);
    let mut g_a5 = layers::column_pool_backward(&g_pooled, cfg.head_channels, c.a5.h, c.a5.w, cfg.head_bins);
    for (g, &a) in g_a5.data.iter_mut().zip(&c.a5.data) {
        *g *= layers::silu_grad(a);
    }
    let (w, _) = l.head.wb(p);
    let (gw, gb) = l.head.wb_mut(grad);
    let g_q = layers::conv3x3_backward(&c.q, w, &g_a5, gw, gb, want_depth)?;
    // q = 1/d
    Some(g_q.data.iter().zip(&c.q.data).map(|(g, q)| -g * q * q).collect())
}

fn forward_cached(p: &ModelParams, x: Tensor, state: &RecurrentState, head_depth: Option<&[f64]>) -> Cache {
    let cfg = &p.config;
    let l = p.layers();
    let (w, b) = l.enc1.wb(p);
    let a1 = layers::conv3x3(&x, w, b, cfg.enc1_channels);
    let e1 = layers::avg_pool2(&silu_t(&a1));
    let (w, b) = l.enc2.wb(p);
    let a2 = layers::conv3x3(&e1, w, b, cfg.enc2_channels);
    let e2 = layers::avg_pool2(&silu_t(&a2));

    let (rec, bottleneck) = match (l.rec_z, l.rec_c) {
        (Some(lz), Some(lc)) => {
            let h_prev = state.hidden.clone().unwrap_or_else(|| e2.zeros_like());
            let u = e2.concat(&h_prev);
            let (w, b) = lz.wb(p);
            let z = layers::conv3x3(&u, w, b, cfg.enc2_channels).map(layers::sigmoid);
            let (w, b) = lc.wb(p);
            let cand = layers::conv3x3(&u, w, b, cfg.enc2_channels).map(f64::tanh);
            let mut h = h_prev.zeros_like();
            for i in 0..h.data.len() {
                h.data[i] = (1.0 - z.data[i]) * h_prev.data[i] + z.data[i] * cand.data[i];
            }
            (Some(RecCache { u, h_prev, z, cand }), h)
        }
        _ => (None, e2.clone()),
    };

    let d1in = layers::resize_bilinear(&bottleneck, e1.h, e1.w).concat(&e1);
    let (w, b) = l.dec1.wb(p);
    let a3 = layers::conv3x3(&d1in, w, b, cfg.dec_channels);
    let d2in = layers::resize_bilinear(&silu_t(&a3), x.h, x.w).concat(&x);
    let (w, b) = l.dec2.wb(p);
    let a4 = layers::conv3x3(&d2in, w, b, 1);
    let depth: Vec<f64> = a4.data.iter().map(|&a| layers::softplus(a) + DEPTH_FLOOR).collect();
    let head = head_forward(p, &l, head_depth.unwrap_or(&depth));
    Cache {
        x,
        a1,
        e1,
        a2,
        e2,
        rec,
        bottleneck,
        d1in,
        a3,
        d2in,
        a4,
        depth,
        head,
    }
}

/// Runs the predictor and the head on one mask. The hidden state of the
/// returned prediction feeds the next frame of the same trajectory.
pub fn forward(params: &ModelParams, bem: &Bem, state: &RecurrentState) -> Result<Prediction> {
    let x = input_tensor(&params.config, bem)?;
    check_state(&params.config, state)?;
    let c = forward_cached(params, x, state, None);
    Ok(Prediction {
        v_y: c.head.v,
        state: RecurrentState {
            hidden: c.rec.is_some().then_some(c.bottleneck),
        },
        depth: c.depth,
    })
}

fn check_sample(params: &ModelParams, depth_gt: &[f64], label: f64) -> Result<()> {
    if depth_gt.len() != params.config.input_len() {
        return Err(Error::shape(params.config.input_len(), depth_gt.len()));
    }
    if !(label.abs() <= 1.0) {
        return Err(Error::Validation(format!("label {} outside [-1, 1]", label)));
    }
    Ok(())
}

fn losses(c: &Cache, depth_gt: &[f64], label: f64, mode: Mode, w: LossWeights) -> Result<(f64, f64, f64)> {
    let l_p = loss_perception(&c.depth, depth_gt)?;
    let l_v = loss_velocity(c.head.v, label);
    let obj = match mode {
        Mode::Joint | Mode::Independent => w.w_p * l_p + w.w_v * l_v,
        Mode::NoDepth => w.w_v * l_v,
    };
    Ok((l_p, l_v, obj))
}

/// Value of the mode's training objective for one sample.
pub fn objective(
    params: &ModelParams,
    bem: &Bem,
    depth_gt: &[f64],
    label: f64,
    state: &RecurrentState,
    mode: Mode,
    weights: LossWeights,
) -> Result<f64> {
    let x = input_tensor(&params.config, bem)?;
    check_state(&params.config, state)?;
    check_sample(params, depth_gt, label)?;
    let head_depth = (mode == Mode::Independent).then_some(depth_gt);
    let c = forward_cached(params, x, state, head_depth);
    Ok(losses(&c, depth_gt, label, mode, weights)?.2)
}

/// Gradient of the mode's objective with respect to every parameter.
///
/// The incoming hidden state is treated as a constant (one-step truncated
/// backpropagation through time). In `Independent` mode the head reads the
/// ground-truth depth, so its loss never reaches `theta`.
pub fn backward(
    params: &ModelParams,
    bem: &Bem,
    depth_gt: &[f64],
    label: f64,
    state: &RecurrentState,
    mode: Mode,
    weights: LossWeights,
) -> Result<StepOutput> {
    let cfg = params.config;
    let x = input_tensor(&cfg, bem)?;
    check_state(&cfg, state)?;
    check_sample(params, depth_gt, label)?;
    let head_depth = (mode == Mode::Independent).then_some(depth_gt);
    let c = forward_cached(params, x, state, head_depth);
    let (l_p, l_v, obj) = losses(&c, depth_gt, label, mode, weights)?;
    let l = params.layers();
    let mut grad = Gradient::zeros_like(params);

    let g_v = weights.w_v * 2.0 * (c.head.v - label);
    let through_head = mode != Mode::Independent;
    let mut g_depth = head_backward(params, &l, &c.head, g_v, &mut grad, through_head).unwrap_or_else(|| vec![0.0; c.depth.len()]);
    if mode != Mode::NoDepth {
        let n = depth_gt.len() as f64;
        for ((g, &p), &t) in g_depth.iter_mut().zip(&c.depth).zip(depth_gt) {
            *g += weights.w_p * 2.0 * (p - t) / (t * n);
        }
    }

    // depth = softplus(a4) + floor
    let g_a4 = Tensor::from_vec(
        1,
        cfg.input_height,
        cfg.input_width,
        g_depth.iter().zip(&c.a4.data).map(|(g, &a)| g * layers::sigmoid(a)).collect(),
    );
    let (w, _) = l.dec2.wb(params);
    let (gw, gb) = l.dec2.wb_mut(&mut grad);
    let g_d2in = layers::conv3x3_backward(&c.d2in, w, &g_a4, gw, gb, true).unwrap();
    let (g_up3, _) = g_d2in.split(cfg.dec_channels);
    let mut g_a3 = layers::resize_bilinear_backward(&g_up3, c.a3.h, c.a3.w);
    for (g, &a) in g_a3.data.iter_mut().zip(&c.a3.data) {
        *g *= layers::silu_grad(a);
    }
    let (w, _) = l.dec1.wb(params);
    let (gw, gb) = l.dec1.wb_mut(&mut grad);
    let g_d1in = layers::conv3x3_backward(&c.d1in, w, &g_a3, gw, gb, true).unwrap();
    let (g_upb, mut g_e1) = g_d1in.split(cfg.enc2_channels);
    let g_bottleneck = layers::resize_bilinear_backward(&g_upb, c.bottleneck.h, c.bottleneck.w);

    let g_e2 = match (&c.rec, l.rec_z, l.rec_c) {
        (Some(r), Some(lz), Some(lc)) => {
            let n = g_bottleneck.data.len();
            let mut g_az = g_bottleneck.zeros_like();
            let mut g_ac = g_bottleneck.zeros_like();
            for i in 0..n {
                let gh = g_bottleneck.data[i];
                let (z, cand) = (r.z.data[i], r.cand.data[i]);
                g_az.data[i] = gh * (cand - r.h_prev.data[i]) * z * (1.0 - z);
                g_ac.data[i] = gh * z * (1.0 - cand * cand);
            }
            let (w, _) = lz.wb(params);
            let (gw, gb) = lz.wb_mut(&mut grad);
            let mut g_u = layers::conv3x3_backward(&r.u, w, &g_az, gw, gb, true).unwrap();
            let (w, _) = lc.wb(params);
            let (gw, gb) = lc.wb_mut(&mut grad);
            let g_u2 = layers::conv3x3_backward(&r.u, w, &g_ac, gw, gb, true).unwrap();
            for (a, b) in g_u.data.iter_mut().zip(&g_u2.data) {
                *a += b;
            }
            g_u.split(cfg.enc2_channels).0
        }
        _ => g_bottleneck,
    };

    let mut g_a2 = layers::avg_pool2_backward(&g_e2, c.a2.h, c.a2.w);
    for (g, &a) in g_a2.data.iter_mut().zip(&c.a2.data) {
        *g *= layers::silu_grad(a);
    }
    let (w, _) = l.enc2.wb(params);
    let (gw, gb) = l.enc2.wb_mut(&mut grad);
    let g_e1_enc = layers::conv3x3_backward(&c.e1, w, &g_a2, gw, gb, true).unwrap();
    for (a, b) in g_e1.data.iter_mut().zip(&g_e1_enc.data) {
        *a += b;
    }
    let mut g_a1 = layers::avg_pool2_backward(&g_e1, c.a1.h, c.a1.w);
    for (g, &a) in g_a1.data.iter_mut().zip(&c.a1.data) {
        *g *= layers::silu_grad(a);
    }
    let (w, _) = l.enc1.wb(params);
    let (gw, gb) = l.enc1.wb_mut(&mut grad);
    layers::conv3x3_backward(&c.x, w, &g_a1, gw, gb, false);
    let _ = &c.e2;

    Ok(StepOutput {
        l_p,
        l_v,
        objective: obj,
        gradient: grad,
        v_y: c.head.v,
        state: RecurrentState {
            hidden: c.rec.is_some().then_some(c.bottleneck),
        },
    })
}
