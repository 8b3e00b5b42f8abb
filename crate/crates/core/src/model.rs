//! Tiny EDSR-baseline-style super-resolution network.
//!
//! Topology: head conv 3→C, then `n_blocks` residual blocks
//! (conv-ReLU-conv with an inner skip scaled by `residual_scaling`), a
//! body-end conv with a global skip back to the head output, a tail conv
//! C→3s² feeding pixel-shuffle(s), and a final 3→3 conv. All convolutions
//! are 3×3. Only conv/ReLU/add/pixel-shuffle appear, so the whole map is
//! piecewise linear. Outputs are left unclamped; metric evaluation and PNG
//! export clamp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::tensor::{Graph, NodeId, Tensor};

fn default_channels() -> usize {
    16
}
fn default_n_blocks() -> usize {
    4
}
fn default_residual_scaling() -> f32 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_residual_scaling")]
    pub residual_scaling: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 2,
            channels: default_channels(),
            n_blocks: default_n_blocks(),
            residual_scaling: default_residual_scaling(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 1 {
            return Err(Error::InvalidArgument("model scale must be >= 1".into()));
        }
        if self.channels < 1 {
            return Err(Error::InvalidArgument("model channels must be >= 1".into()));
        }
        if !self.residual_scaling.is_finite() {
            return Err(Error::InvalidArgument(
                "residual_scaling must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Parameter tensors in checkpoint order: (name, shape).
    pub fn parameter_plan(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let s = self.scale;
        let mut plan = vec![
            ("head.weight".to_string(), vec![c, 3, 3, 3]),
            ("head.bias".to_string(), vec![c]),
        ];
        for i in 0..self.n_blocks {
            plan.push((format!("block{i}.conv1.weight"), vec![c, c, 3, 3]));
            plan.push((format!("block{i}.conv1.bias"), vec![c]));
            plan.push((format!("block{i}.conv2.weight"), vec![c, c, 3, 3]));
            plan.push((format!("block{i}.conv2.bias"), vec![c]));
        }
        plan.push(("body_end.weight".to_string(), vec![c, c, 3, 3]));
        plan.push(("body_end.bias".to_string(), vec![c]));
        plan.push(("tail.weight".to_string(), vec![3 * s * s, c, 3, 3]));
        plan.push(("tail.bias".to_string(), vec![3 * s * s]));
        plan.push(("final.weight".to_string(), vec![3, 3, 3, 3]));
        plan.push(("final.bias".to_string(), vec![3]));
        plan
    }
}

/// Named parameter tensors in a fixed order determined by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: Vec<(String, Tensor)>,
}

impl ModelParams {
    /// Kernel entries uniform in (−b, b) with b = sqrt(1 / fan_in); biases
    /// zero. Deterministic for a given seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for (name, shape) in config.parameter_plan() {
            let t = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let b = (1.0 / fan_in).sqrt() as f32;
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-b..b)).collect();
                Tensor::from_vec(&shape, data)?
            } else {
                Tensor::zeros(&shape)
            };
            tensors.push((name, t));
        }
        Ok(ModelParams {
            config: *config,
            tensors,
        })
    }

    /// Rebuild from flat tensors in plan order (checkpoint loading).
    pub fn from_tensors(
        config: &ModelConfig,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<ModelParams> {
        config.validate()?;
        let plan = config.parameter_plan();
        if plan.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                plan.len(),
                tensors.len()
            )));
        }
        for ((want_name, want_shape), (name, t)) in plan.iter().zip(&tensors) {
            if want_name != name {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: expected {want_name}, got {name}"
                )));
            }
            if want_shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    want_shape,
                    t.shape()
                )));
            }
        }
        Ok(ModelParams {
            config: *config,
            tensors,
        })
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.is_finite())
    }
}

/// Parameter node ids (plan order) plus the output node of one forward build.
pub struct BoundForward {
    pub param_ids: Vec<NodeId>,
    pub output: NodeId,
}

/// Builds the network on `graph` from `input` (N, 3, H, W). With
/// `trainable`, parameters enter as gradient-carrying nodes in plan order.
pub fn forward(
    graph: &mut Graph,
    params: &ModelParams,
    input: NodeId,
    trainable: bool,
) -> Result<BoundForward> {
    let cfg = &params.config;
    let mut ids = Vec::with_capacity(params.tensors.len());
    for (_, t) in &params.tensors {
        let id = if trainable {
            graph.param(t.clone())
        } else {
            graph.leaf(t.clone())
        };
        ids.push(id);
    }
    // Plan order: head(2), blocks(4 each), body_end(2), tail(2), final(2).
    let mut i = 0;
    let mut next = || {
        let pair = (ids[i], ids[i + 1]);
        i += 2;
        pair
    };
    let (head_w, head_b) = next();
    let mut block_params = Vec::with_capacity(cfg.n_blocks);
    for _ in 0..cfg.n_blocks {
        block_params.push((next(), next()));
    }
    let (body_w, body_b) = next();
    let (tail_w, tail_b) = next();
    let (final_w, final_b) = next();

    let head = graph.conv2d(input, head_w, head_b)?;
    let mut h = head;
    for ((w1, b1), (w2, b2)) in block_params {
        let r = graph.conv2d(h, w1, b1)?;
        let r = graph.relu(r);
        let mut r = graph.conv2d(r, w2, b2)?;
        if cfg.residual_scaling != 1.0 {
            r = graph.scale(r, cfg.residual_scaling);
        }
        h = graph.add(h, r)?;
    }
    let body = graph.conv2d(h, body_w, body_b)?;
    let body = graph.add(head, body)?;
    let tail = graph.conv2d(body, tail_w, tail_b)?;
    let up = graph.pixel_shuffle(tail, cfg.scale)?;
    let output = graph.conv2d(up, final_w, final_b)?;
    Ok(BoundForward {
        param_ids: ids,
        output,
    })
}

/// (H, W, C) image to a (1, C, H, W) tensor.
pub fn image_to_tensor(img: &Image) -> Tensor {
    images_to_batch(std::slice::from_ref(img)).expect("single image is always a valid batch")
}

/// Stack same-sized images into an (N, C, H, W) tensor.
pub fn images_to_batch(imgs: &[Image]) -> Result<Tensor> {
    let first = imgs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(imgs.len() * c * h * w);
    for img in imgs {
        if (img.height, img.width, img.channels) != (h, w, c) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {}x{}x{} with {}x{}x{}",
                h, w, c, img.height, img.width, img.channels
            )));
        }
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(img.at(y, x, ch));
                }
            }
        }
    }
    Tensor::from_vec(&[imgs.len(), c, h, w], data)
}

/// (N, C, H, W) tensor back to N images.
pub fn batch_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let shape = t.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected NCHW tensor, got {:?}",
            shape
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let data = t.data();
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let mut img = Image::new(h, w, c);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    *img.at_mut(y, x, ch) = data[((b * c + ch) * h + y) * w + x];
                }
            }
        }
        out.push(img);
    }
    Ok(out)
}

/// Run the network on one LR image; returns the unclamped SR image.
pub fn predict(params: &ModelParams, lr: &Image) -> Result<Image> {
    if lr.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "model input must be RGB, got {} channels",
            lr.channels
        )));
    }
    let mut g = Graph::new();
    let x = g.leaf(image_to_tensor(lr));
    let bound = forward(&mut g, params, x, false)?;
    let mut imgs = batch_to_images(g.value(bound.output))?;
    Ok(imgs.remove(0))
}
