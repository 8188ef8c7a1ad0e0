//! Validity model: a convolutional beta-VAE over scene images whose
//! posterior mean, concatenated with the trajectory control point, feeds a
//! small classifier that predicts trajectory validity for one user type.
//!
//! ```text
//! image -> conv16 -> conv8 -> conv4 -> fc -> (mu, logvar) -> z_I
//! z_I -> fc -> deconv8 -> deconv16 -> deconv3 -> crop -> sigmoid -> image'
//! [z_I, theta] -> fc64 -> fc32 -> fc1 -> sigmoid -> validity
//! ```
//!
//! Loss per demonstration: `alpha * BCE(image', image) + beta * KL + gamma * BCE(validity, v)`,
//! where the reconstruction BCE is summed over pixels and channels (the image
//! log-likelihood) and the KL is summed over latent dimensions.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    adam_step, bce, bce_backward, conv2d_backward, conv2d_forward, crop_center, crop_center_backward,
    deconv2d_backward, deconv2d_forward, dense_backward, dense_forward, kl_gaussian, relu,
    relu_backward, reparameterize, reparameterize_backward, sigmoid, sigmoid_backward, AdamConfig,
    OptimizerState, ParamStore, Tensor,
};
use crate::error::{Error, Result};
use crate::rng::{rng, rng_from, Rng};
use crate::scene::{render_scene_at, Image, Scene, IMAGE_SIZE};
use crate::trajectory::{ControlPoint, Demonstration, UserType};

pub const LATENT_DIM: usize = 15;
pub const THETA_DIM: usize = 2;
pub const Z_DIM: usize = LATENT_DIM + THETA_DIM;
const ENC_CHANNELS: [usize; 3] = [16, 8, 4];
const DEC_CHANNELS: [usize; 3] = [8, 16, 3];
const CLS_HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 4.0,
            gamma: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub cls: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn compose(w: LossWeights, recon: f64, kl: f64, cls: f64) -> Self {
        LossBreakdown {
            recon,
            kl,
            cls,
            total: w.alpha * recon + w.beta * kl + w.gamma * cls,
        }
    }
}

/// Scene posterior plus the trajectory latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: [f64; LATENT_DIM],
    pub logvar: [f64; LATENT_DIM],
    pub z_image: [f64; LATENT_DIM],
    pub z_theta: Option<ControlPoint>,
}

impl LatentCode {
    /// `concat(z_I, z_theta)`; requires `z_theta` to be set.
    pub fn z(&self) -> Option<[f64; Z_DIM]> {
        self.z_theta.map(|t| concat_z(&self.z_image, t))
    }
}

pub fn concat_z(z_image: &[f64; LATENT_DIM], theta: ControlPoint) -> [f64; Z_DIM] {
    let mut z = [0.0; Z_DIM];
    z[..LATENT_DIM].copy_from_slice(z_image);
    z[LATENT_DIM..].copy_from_slice(&theta.0);
    z
}

/// Spatial extents through the network for a square input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub image_size: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            image_size: IMAGE_SIZE,
        }
    }
}

impl Arch {
    /// Side length of the deepest feature map.
    pub fn bottleneck(self) -> usize {
        let mut s = self.image_size;
        for _ in 0..3 {
            s = s.div_ceil(2);
        }
        s
    }

    fn flat(self) -> usize {
        ENC_CHANNELS[2] * self.bottleneck() * self.bottleneck()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecModel {
    pub user_type: UserType,
    pub arch: Arch,
    pub weights: LossWeights,
    pub params: ParamStore,
    pub init_seed: u64,
    init_checksum: u64,
}

struct EncoderPass {
    input: Tensor,
    pre: [Tensor; 3],
    post: [Tensor; 3],
    flat: Tensor,
    mu: Tensor,
    logvar: Tensor,
}

struct DecoderPass {
    z: Tensor,
    fc_pre: Tensor,
    fc_post: Tensor,
    pre: [Tensor; 3],
    post: [Tensor; 2],
    out: Tensor,
}

struct ClassifierPass {
    z: Tensor,
    pre: [Tensor; 2],
    post: [Tensor; 2],
    out: Tensor,
}

/// Demonstrations grouped by scene; every image is encoded once per batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[U, 3, H, W]` images of the distinct scenes.
    pub images: Tensor,
    /// Scene row for every demonstration.
    pub scene_of: Vec<usize>,
    pub thetas: Vec<ControlPoint>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn new(images: &[Image], scene_of: Vec<usize>, thetas: Vec<ControlPoint>, labels: Vec<f64>) -> Result<Self> {
        if images.is_empty() || thetas.is_empty() || thetas.len() != labels.len() || scene_of.len() != labels.len() {
            return Err(Error::Shape("batch needs matching, non-empty demo lists".into()));
        }
        if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Precondition("validity labels must be 0 or 1".into()));
        }
        if scene_of.iter().any(|&u| u >= images.len()) {
            return Err(Error::Shape("scene index out of range".into()));
        }
        let (h, w) = (images[0].height, images[0].width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(Error::Shape("batch images differ in size".into()));
            }
            data.extend(img.to_chw());
        }
        Ok(Batch {
            images: Tensor::new(&[images.len(), 3, h, w], data)?,
            scene_of,
            thetas,
            labels,
        })
    }

    pub fn scenes(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Result of a forward/backward pass over one batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: LossBreakdown,
    pub predictions: Vec<f64>,
}

impl SpecModel {
    pub fn new(user_type: UserType, arch: Arch, weights: LossWeights, seed: u64) -> Self {
        let params = init_params(arch, &mut rng_from(seed, "init", 0));
        let init_checksum = params.checksum();
        SpecModel {
            user_type,
            arch,
            weights,
            params,
            init_seed: seed,
            init_checksum,
        }
    }

    /// Rebuilds a model around trained parameters.
    pub fn with_params(user_type: UserType, arch: Arch, weights: LossWeights, seed: u64, params: ParamStore) -> Result<Self> {
        let mut model = SpecModel::new(user_type, arch, weights, seed);
        for (path, p) in model.params.iter() {
            if !params.contains(path) || params.get(path).shape() != p.value.shape() {
                return Err(Error::Shape(format!("checkpoint lacks or misshapes {path}")));
            }
        }
        if params.len() != model.params.len() {
            return Err(Error::Shape("checkpoint has unexpected parameters".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn is_untrained(&self) -> bool {
        self.params.checksum() == self.init_checksum
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let s = self.arch.image_size;
        if image.height != s || image.width != s || image.pixels.len() != 3 * s * s {
            return Err(Error::Shape(format!(
                "expected {s}x{s}x3 image, got {}x{}",
                image.height, image.width
            )));
        }
        Ok(())
    }

    pub fn render(&self, scene: &Scene) -> Image {
        render_scene_at(scene, self.arch.image_size)
    }

    fn encoder_forward(&self, input: Tensor) -> Result<EncoderPass> {
        let p = &self.params;
        let mut x = input.clone();
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(3);
        for i in 0..3 {
            let y = conv2d_forward(&x, p.get(&format!("enc.conv{}.k", i + 1)), Some(p.get(&format!("enc.conv{}.b", i + 1))), 2)?;
            let a = relu(&y);
            pre.push(y);
            post.push(a.clone());
            x = a;
        }
        let batch = input.shape()[0];
        let flat = x.reshape(&[batch, self.arch.flat()])?;
        let head = dense_forward(&flat, p.get("enc.fc.w"), p.get("enc.fc.b"))?;
        let (mut mu, mut lv) = (Vec::with_capacity(batch * LATENT_DIM), Vec::with_capacity(batch * LATENT_DIM));
        for row in head.data().chunks(2 * LATENT_DIM) {
            mu.extend_from_slice(&row[..LATENT_DIM]);
            lv.extend_from_slice(&row[LATENT_DIM..]);
        }
        Ok(EncoderPass {
            input,
            pre: pre.try_into().expect("three layers"),
            post: post.try_into().expect("three layers"),
            flat,
            mu: Tensor::new(&[batch, LATENT_DIM], mu)?,
            logvar: Tensor::new(&[batch, LATENT_DIM], lv)?,
        })
    }

    fn encoder_backward(&self, pass: &EncoderPass, dmu: &Tensor, dlogvar: &Tensor, grads: &mut ParamStore) -> Result<()> {
        let batch = dmu.shape()[0];
        let mut dhead = Vec::with_capacity(batch * 2 * LATENT_DIM);
        for (a, b) in dmu.data().chunks(LATENT_DIM).zip(dlogvar.data().chunks(LATENT_DIM)) {
            dhead.extend_from_slice(a);
            dhead.extend_from_slice(b);
        }
        let dhead = Tensor::new(&[batch, 2 * LATENT_DIM], dhead)?;
        let (dflat, dw, db) = dense_backward(&pass.flat, self.params.get("enc.fc.w"), &dhead)?;
        grads.accumulate("enc.fc.w", &dw)?;
        grads.accumulate("enc.fc.b", &db)?;
        let mut d = dflat.reshape(pass.post[2].shape())?;
        for i in (0..3).rev() {
            let dpre = relu_backward(&pass.pre[i], &d)?;
            let input = if i == 0 { &pass.input } else { &pass.post[i - 1] };
            let kname = format!("enc.conv{}.k", i + 1);
            let (dx, dk, dbias) = conv2d_backward(input, self.params.get(&kname), &dpre, 2)?;
            grads.accumulate(&kname, &dk)?;
            grads.accumulate(&format!("enc.conv{}.b", i + 1), &dbias)?;
            d = dx;
        }
        Ok(())
    }

    fn decoder_forward(&self, z: Tensor) -> Result<DecoderPass> {
        let p = &self.params;
        let batch = z.shape()[0];
        let s = self.arch.bottleneck();
        let fc_pre = dense_forward(&z, p.get("dec.fc.w"), p.get("dec.fc.b"))?;
        let fc_post = relu(&fc_pre);
        let mut x = fc_post.clone().reshape(&[batch, ENC_CHANNELS[2], s, s])?;
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(2);
        for i in 0..3 {
            let y = deconv2d_forward(&x, p.get(&format!("dec.deconv{}.k", i + 1)), Some(p.get(&format!("dec.deconv{}.b", i + 1))))?;
            if i < 2 {
                let a = relu(&y);
                post.push(a.clone());
                x = a;
            }
            pre.push(y);
        }
        let size = self.arch.image_size;
        let logits = crop_center(&pre[2], size, size)?;
        Ok(DecoderPass {
            z,
            fc_pre,
            fc_post,
            pre: pre.try_into().expect("three layers"),
            post: post.try_into().expect("two layers"),
            out: sigmoid(&logits),
        })
    }

    /// Backpropagates `dout` (gradient wrt the sigmoid output) and returns dz.
    fn decoder_backward(&self, pass: &DecoderPass, dout: &Tensor, grads: &mut ParamStore) -> Result<Tensor> {
        let dlogits = sigmoid_backward(&pass.out, dout)?;
        let mut d = crop_center_backward(pass.pre[2].shape(), &dlogits)?;
        for i in (0..3).rev() {
            if i < 2 {
                d = relu_backward(&pass.pre[i], &d)?;
            }
            let input = if i == 0 {
                let s = self.arch.bottleneck();
                pass.fc_post.clone().reshape(&[pass.z.shape()[0], ENC_CHANNELS[2], s, s])?
            } else {
                pass.post[i - 1].clone()
            };
            let kname = format!("dec.deconv{}.k", i + 1);
            let (dx, dk, db) = deconv2d_backward(&input, self.params.get(&kname), &d)?;
            grads.accumulate(&kname, &dk)?;
            grads.accumulate(&format!("dec.deconv{}.b", i + 1), &db)?;
            d = dx;
        }
        let dfc = relu_backward(&pass.fc_pre, &d.reshape(pass.fc_pre.shape())?)?;
        let (dz, dw, db) = dense_backward(&pass.z, self.params.get("dec.fc.w"), &dfc)?;
        grads.accumulate("dec.fc.w", &dw)?;
        grads.accumulate("dec.fc.b", &db)?;
        Ok(dz)
    }

    fn classifier_forward(&self, z: Tensor) -> Result<ClassifierPass> {
        let p = &self.params;
        let h1 = dense_forward(&z, p.get("cls.fc1.w"), p.get("cls.fc1.b"))?;
        let a1 = relu(&h1);
        let h2 = dense_forward(&a1, p.get("cls.fc2.w"), p.get("cls.fc2.b"))?;
        let a2 = relu(&h2);
        let logit = dense_forward(&a2, p.get("cls.fc3.w"), p.get("cls.fc3.b"))?;
        Ok(ClassifierPass {
            z,
            pre: [h1, h2],
            post: [a1, a2],
            out: sigmoid(&logit),
        })
    }

    /// Backpropagates `dout` (gradient wrt the sigmoid output) and returns dz.
    /// Parameter gradients go to `grads` when given.
    fn classifier_backward(&self, pass: &ClassifierPass, dout: &Tensor, grads: Option<&mut ParamStore>) -> Result<Tensor> {
        let p = &self.params;
        let dlogit = sigmoid_backward(&pass.out, dout)?;
        let (da2, dw3, db3) = dense_backward(&pass.post[1], p.get("cls.fc3.w"), &dlogit)?;
        let dh2 = relu_backward(&pass.pre[1], &da2)?;
        let (da1, dw2, db2) = dense_backward(&pass.post[0], p.get("cls.fc2.w"), &dh2)?;
        let dh1 = relu_backward(&pass.pre[0], &da1)?;
        let (dz, dw1, db1) = dense_backward(&pass.z, p.get("cls.fc1.w"), &dh1)?;
        if let Some(g) = grads {
            for (name, t) in [
                ("cls.fc1.w", &dw1),
                ("cls.fc1.b", &db1),
                ("cls.fc2.w", &dw2),
                ("cls.fc2.b", &db2),
                ("cls.fc3.w", &dw3),
                ("cls.fc3.b", &db3),
            ] {
                g.accumulate(name, t)?;
            }
        }
        Ok(dz)
    }

    /// Encodes one image; `noise = None` means zero noise (z_I = mu).
    pub fn encode(&self, image: &Image, noise: Option<&[f64; LATENT_DIM]>) -> Result<LatentCode> {
        self.check_image(image)?;
        let s = self.arch.image_size;
        let pass = self.encoder_forward(Tensor::new(&[1, 3, s, s], image.to_chw())?)?;
        let eps = Tensor::new(&[1, LATENT_DIM], noise.map_or(vec![0.0; LATENT_DIM], |n| n.to_vec()))?;
        let z = reparameterize(&pass.mu, &pass.logvar, &eps)?;
        Ok(LatentCode {
            mu: pass.mu.data().try_into().expect("latent width"),
            logvar: pass.logvar.data().try_into().expect("latent width"),
            z_image: z.data().try_into().expect("latent width"),
            z_theta: None,
        })
    }

    /// Posterior means for several images at once.
    pub fn posterior_means(&self, images: &[Image]) -> Result<Vec<[f64; LATENT_DIM]>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let s = self.arch.image_size;
        let mut data = Vec::with_capacity(images.len() * 3 * s * s);
        for img in images {
            self.check_image(img)?;
            data.extend(img.to_chw());
        }
        let pass = self.encoder_forward(Tensor::new(&[images.len(), 3, s, s], data)?)?;
        Ok(pass
            .mu
            .data()
            .chunks(LATENT_DIM)
            .map(|c| c.try_into().expect("latent width"))
            .collect())
    }

    pub fn decode(&self, z_image: &[f64; LATENT_DIM]) -> Result<Image> {
        let pass = self.decoder_forward(Tensor::new(&[1, LATENT_DIM], z_image.to_vec())?)?;
        let s = self.arch.image_size;
        Ok(Image::from_chw(s, s, pass.out.data()))
    }

    pub fn classify(&self, z: &[f64; Z_DIM]) -> Result<f64> {
        let pass = self.classifier_forward(Tensor::new(&[1, Z_DIM], z.to_vec())?)?;
        Ok(pass.out.data()[0])
    }

    /// Validity scores for many control points under one scene code.
    pub fn classify_thetas(&self, z_image: &[f64; LATENT_DIM], thetas: &[ControlPoint]) -> Result<Vec<f64>> {
        if thetas.is_empty() {
            return Ok(Vec::new());
        }
        let mut data = Vec::with_capacity(thetas.len() * Z_DIM);
        for &t in thetas {
            data.extend_from_slice(&concat_z(z_image, t));
        }
        let pass = self.classifier_forward(Tensor::new(&[thetas.len(), Z_DIM], data)?)?;
        Ok(pass.out.into_data())
    }

    /// Score and its gradient with respect to the whole input `z`.
    pub fn classify_with_grad(&self, z: &[f64; Z_DIM]) -> Result<(f64, [f64; Z_DIM])> {
        let pass = self.classifier_forward(Tensor::new(&[1, Z_DIM], z.to_vec())?)?;
        let dz = self.classifier_backward(&pass, &Tensor::full(&[1, 1], 1.0), None)?;
        Ok((pass.out.data()[0], dz.data().try_into().expect("z width")))
    }

    /// Noise-free validity score: classify(concat(mu, theta)).
    pub fn predict_validity(&self, image: &Image, theta: ControlPoint) -> Result<f64> {
        let code = self.encode(image, None)?;
        self.classify(&concat_z(&code.mu, theta))
    }

    /// Scores on a `grid_n x grid_n` lattice of cell centers over the unit
    /// square. Row `i` holds `theta_y = (i + 0.5) / n`, column `j` `theta_x`.
    pub fn latent_grid_sample(&self, image: &Image, grid_n: usize) -> Result<Vec<Vec<f64>>> {
        if grid_n == 0 {
            return Err(Error::Precondition("grid_n must be >= 1".into()));
        }
        let mu = self.encode(image, None)?.mu;
        let coord = |i: usize| (i as f64 + 0.5) / grid_n as f64;
        let thetas: Vec<_> = (0..grid_n)
            .flat_map(|i| (0..grid_n).map(move |j| ControlPoint::new(coord(j), coord(i))))
            .collect();
        let scores = self.classify_thetas(&mu, &thetas)?;
        Ok(scores.chunks(grid_n).map(|r| r.to_vec()).collect())
    }

    /// Loss for a single (image, theta, v) record with explicit noise.
    pub fn loss(&self, image: &Image, theta: ControlPoint, v: f64, noise: &[f64; LATENT_DIM]) -> Result<LossBreakdown> {
        self.check_image(image)?;
        let batch = Batch::new(std::slice::from_ref(image), vec![0], vec![theta], vec![v])?;
        let noise = Tensor::new(&[1, LATENT_DIM], noise.to_vec())?;
        Ok(self.forward_backward(&batch, &noise, None)?.loss)
    }

    /// Mean loss over the batch; gradients are added to `grads` when given.
    /// `noise` is `[U, 15]`, one draw per distinct scene.
    pub fn forward_backward(&self, batch: &Batch, noise: &Tensor, grads: Option<&mut ParamStore>) -> Result<BatchOutcome> {
        let scenes = batch.scenes();
        let demos = batch.len() as f64;
        noise.expect_shape(&[scenes, LATENT_DIM])?;
        let w = self.weights;
        let mut counts = vec![0.0; scenes];
        for &u in &batch.scene_of {
            counts[u] += 1.0;
        }

        let enc = self.encoder_forward(batch.images.clone())?;
        let z_img = reparameterize(&enc.mu, &enc.logvar, noise)?;
        let dec = self.decoder_forward(z_img.clone())?;

        // Per-scene reconstruction and KL, weighted by how many demos use the scene.
        let pix = batch.images.len() / scenes;
        let mut recon = 0.0;
        let mut kl = 0.0;
        for u in 0..scenes {
            let target = Tensor::new(&[pix], batch.images.data()[u * pix..(u + 1) * pix].to_vec())?;
            let pred = Tensor::new(&[pix], dec.out.data()[u * pix..(u + 1) * pix].to_vec())?;
            recon += counts[u] * pix as f64 * bce(&pred, &target)?;
            let mu = Tensor::new(&[1, LATENT_DIM], enc.mu.data()[u * LATENT_DIM..(u + 1) * LATENT_DIM].to_vec())?;
            let lv = Tensor::new(&[1, LATENT_DIM], enc.logvar.data()[u * LATENT_DIM..(u + 1) * LATENT_DIM].to_vec())?;
            kl += counts[u] * kl_gaussian(&mu, &lv)?;
        }
        recon /= demos;
        kl /= demos;

        let mut zdata = Vec::with_capacity(batch.len() * Z_DIM);
        for (&u, &t) in batch.scene_of.iter().zip(&batch.thetas) {
            let row: &[f64; LATENT_DIM] = z_img.data()[u * LATENT_DIM..(u + 1) * LATENT_DIM].try_into().expect("width");
            zdata.extend_from_slice(&concat_z(row, t));
        }
        let cls_pass = self.classifier_forward(Tensor::new(&[batch.len(), Z_DIM], zdata)?)?;
        let labels = Tensor::new(&[batch.len(), 1], batch.labels.clone())?;
        let cls = bce(&cls_pass.out, &labels)?;
        let loss = LossBreakdown::compose(w, recon, kl, cls);
        let predictions = cls_pass.out.data().to_vec();

        let Some(grads) = grads else {
            return Ok(BatchOutcome { loss, predictions });
        };

        let mut dz_img = Tensor::zeros(&[scenes, LATENT_DIM]);
        if w.gamma != 0.0 {
            let mut dout = bce_backward(&cls_pass.out, &labels)?;
            dout.scale(w.gamma);
            let dz = self.classifier_backward(&cls_pass, &dout, Some(grads))?;
            for (row, &u) in dz.data().chunks(Z_DIM).zip(&batch.scene_of) {
                for k in 0..LATENT_DIM {
                    dz_img.data_mut()[u * LATENT_DIM + k] += row[k];
                }
            }
        }
        if w.alpha != 0.0 {
            let mut dout = Tensor::zeros(dec.out.shape());
            for u in 0..scenes {
                let range = u * pix..(u + 1) * pix;
                let target = Tensor::new(&[pix], batch.images.data()[range.clone()].to_vec())?;
                let pred = Tensor::new(&[pix], dec.out.data()[range.clone()].to_vec())?;
                let mut g = bce_backward(&pred, &target)?;
                g.scale(w.alpha * pix as f64 * counts[u] / demos);
                dout.data_mut()[range].copy_from_slice(g.data());
            }
            let dz = self.decoder_backward(&dec, &dout, grads)?;
            dz_img.add_assign(&dz)?;
        }
        let (mut dmu, mut dlv) = reparameterize_backward(&enc.logvar, noise, &dz_img)?;
        if w.beta != 0.0 {
            for u in 0..scenes {
                let scale = w.beta * counts[u] / demos;
                for k in 0..LATENT_DIM {
                    let i = u * LATENT_DIM + k;
                    dmu.data_mut()[i] += scale * enc.mu.data()[i];
                    dlv.data_mut()[i] += scale * 0.5 * (enc.logvar.data()[i].exp() - 1.0);
                }
            }
        }
        self.encoder_backward(&enc, &dmu, &dlv, grads)?;
        Ok(BatchOutcome { loss, predictions })
    }
}

fn init_params(arch: Arch, r: &mut Rng) -> ParamStore {
    let mut p = ParamStore::new();
    let mut cin = 3;
    for (i, &c) in ENC_CHANNELS.iter().enumerate() {
        p.insert_normal(&format!("enc.conv{}.k", i + 1), &[c, cin, 3, 3], cin * 9, r);
        p.insert(format!("enc.conv{}.b", i + 1), Tensor::zeros(&[c]));
        cin = c;
    }
    let flat = arch.flat();
    p.insert_uniform("enc.fc.w", &[flat, 2 * LATENT_DIM], (1.0 / flat as f64).sqrt(), r);
    p.insert("enc.fc.b", Tensor::zeros(&[2 * LATENT_DIM]));
    p.insert_normal("dec.fc.w", &[LATENT_DIM, flat], LATENT_DIM, r);
    p.insert("dec.fc.b", Tensor::zeros(&[flat]));
    let mut cin = ENC_CHANNELS[2];
    for (i, &c) in DEC_CHANNELS.iter().enumerate() {
        // a stride-2 transposed 3x3 kernel touches each output ~9/4 times
        p.insert_normal(&format!("dec.deconv{}.k", i + 1), &[cin, c, 3, 3], cin * 9 / 4, r);
        p.insert(format!("dec.deconv{}.b", i + 1), Tensor::zeros(&[c]));
        cin = c;
    }
    let widths = [Z_DIM, CLS_HIDDEN[0], CLS_HIDDEN[1], 1];
    for i in 0..3 {
        p.insert_normal(&format!("cls.fc{}.w", i + 1), &[widths[i], widths[i + 1]], widths[i], r);
        p.insert(format!("cls.fc{}.b", i + 1), Tensor::zeros(&[widths[i + 1]]));
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
}

/// Training data with each distinct scene rendered once.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub images: Vec<Image>,
    pub scene_of: Vec<usize>,
    pub thetas: Vec<ControlPoint>,
    pub labels: Vec<f64>,
}

impl TrainingSet {
    pub fn from_demonstrations(model: &SpecModel, demos: &[Demonstration]) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::Precondition("dataset is empty".into()));
        }
        if demos.iter().any(|d| d.user_type != model.user_type) {
            return Err(Error::Precondition(format!(
                "dataset mixes user types; model is {}",
                model.user_type
            )));
        }
        let mut scenes: Vec<&Scene> = Vec::new();
        let mut scene_of = Vec::with_capacity(demos.len());
        for d in demos {
            let idx = match scenes.iter().position(|s| **s == d.scene) {
                Some(i) => i,
                None => {
                    scenes.push(&d.scene);
                    scenes.len() - 1
                }
            };
            scene_of.push(idx);
        }
        Ok(TrainingSet {
            images: scenes.iter().map(|s| model.render(s)).collect(),
            scene_of,
            thetas: demos.iter().map(|d| d.theta).collect(),
            labels: demos.iter().map(|d| f64::from(u8::from(d.valid))).collect(),
        })
    }

    /// Splits one epoch into batches of whole scenes holding about
    /// `batch_size` demonstrations each.
    pub fn epoch_batches(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<Batch>> {
        let mut per_scene: Vec<Vec<usize>> = vec![Vec::new(); self.images.len()];
        for (i, &u) in self.scene_of.iter().enumerate() {
            per_scene[u].push(i);
        }
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(rng);
        let mut batches = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut pending = 0;
        for (pos, &u) in order.iter().enumerate() {
            current.push(u);
            pending += per_scene[u].len();
            if pending >= batch_size || pos + 1 == order.len() {
                let images: Vec<Image> = current.iter().map(|&s| self.images[s].clone()).collect();
                let (mut scene_of, mut thetas, mut labels) = (Vec::new(), Vec::new(), Vec::new());
                for (row, &s) in current.iter().enumerate() {
                    for &i in &per_scene[s] {
                        scene_of.push(row);
                        thetas.push(self.thetas[i]);
                        labels.push(self.labels[i]);
                    }
                }
                batches.push(Batch::new(&images, scene_of, thetas, labels)?);
                current.clear();
                pending = 0;
            }
        }
        Ok(batches)
    }
}

pub fn standard_normal(r: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(r)).collect()).expect("shape")
}

/// Owns a model and its optimizer across epochs so training can resume.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: SpecModel,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    /// Epochs completed so far.
    pub epoch: usize,
    scratch: ParamStore,
}

impl Trainer {
    pub fn new(model: SpecModel, config: TrainConfig) -> Self {
        let optimizer = OptimizerState::new(&model.params, config.adam);
        let scratch = model.params.clone();
        Trainer {
            model,
            optimizer,
            config,
            epoch: 0,
            scratch,
        }
    }

    pub fn resume(model: SpecModel, optimizer: OptimizerState, config: TrainConfig, epoch: usize) -> Self {
        let scratch = model.params.clone();
        Trainer {
            model,
            optimizer,
            config,
            epoch,
            scratch,
        }
    }

    /// Runs one epoch; batch order and noise depend only on (seed, epoch index).
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<EpochLog> {
        let mut r = rng_from(self.config.seed, "epoch", self.epoch as u64);
        let batches = data.epoch_batches(self.config.batch_size.max(1), &mut r)?;
        let mut sums = [0.0; 4];
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in &batches {
            let noise = standard_normal(&mut r, &[batch.scenes(), LATENT_DIM]);
            self.scratch.zero_grads();
            let out = self.model.forward_backward(batch, &noise, Some(&mut self.scratch))?;
            self.model.params.copy_grads_from(&self.scratch)?;
            adam_step(&mut self.model.params, &mut self.optimizer);
            let n = batch.len() as f64;
            sums[0] += n * out.loss.recon;
            sums[1] += n * out.loss.kl;
            sums[2] += n * out.loss.cls;
            sums[3] += n * out.loss.total;
            correct += out
                .predictions
                .iter()
                .zip(&batch.labels)
                .filter(|(p, v)| (**p >= 0.5) == (**v == 1.0))
                .count();
            seen += batch.len();
        }
        let n = seen as f64;
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            loss: LossBreakdown {
                recon: sums[0] / n,
                kl: sums[1] / n,
                cls: sums[2] / n,
                total: sums[3] / n,
            },
            train_accuracy: correct as f64 / n,
        })
    }

    pub fn train_until(&mut self, data: &TrainingSet, epochs: usize) -> Result<Vec<EpochLog>> {
        let mut log = Vec::new();
        while self.epoch < epochs {
            log.push(self.run_epoch(data)?);
        }
        Ok(log)
    }
}

/// Trains `model` in place on demonstrations of its user type.
pub fn train(model: &mut SpecModel, dataset: &[Demonstration], config: TrainConfig) -> Result<Vec<EpochLog>> {
    let data = TrainingSet::from_demonstrations(model, dataset)?;
    let mut trainer = Trainer::new(model.clone(), config);
    let log = trainer.train_until(&data, config.epochs)?;
    *model = trainer.model;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub user_type: UserType,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epoch: usize,
    pub seed: u64,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
}

fn default_image_size() -> usize {
    IMAGE_SIZE
}

/// Writes `<stem>.spc` and `<stem>.json`.
pub fn save_checkpoint(model: &SpecModel, epoch: usize, stem: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        user_type: model.user_type,
        alpha: model.weights.alpha,
        beta: model.weights.beta,
        gamma: model.weights.gamma,
        epoch,
        seed: model.init_seed,
        image_size: model.arch.image_size,
    };
    model.params.save(&stem.with_extension("spc"))?;
    let json = stem.with_extension("json");
    fs::write(&json, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&json, e))
}

pub fn load_checkpoint(stem: &Path) -> Result<(SpecModel, CheckpointMeta)> {
    let json = stem.with_extension("json");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::schema(&json, e.to_string()))?;
    let params = ParamStore::load(&stem.with_extension("spc"))?;
    let weights = LossWeights {
        alpha: meta.alpha,
        beta: meta.beta,
        gamma: meta.gamma,
    };
    let model = SpecModel::with_params(meta.user_type, Arch { image_size: meta.image_size }, weights, meta.seed, params)?;
    Ok((model, meta))
}

/// Fraction of demonstrations whose label matches `predict_validity >= 0.5`.
pub fn accuracy(model: &SpecModel, demos: &[Demonstration]) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::Precondition("no demonstrations to score".into()));
    }
    let mut cache: Vec<(&Scene, [f64; LATENT_DIM])> = Vec::new();
    let mut correct = 0;
    for d in demos {
        let mu = match cache.iter().find(|(s, _)| **s == d.scene) {
            Some((_, mu)) => *mu,
            None => {
                let mu = model.encode(&model.render(&d.scene), None)?.mu;
                cache.push((&d.scene, mu));
                mu
            }
        };
        if (model.classify(&concat_z(&mu, d.theta))? >= 0.5) == d.valid {
            correct += 1;
        }
    }
    Ok(correct as f64 / demos.len() as f64)
}

/// Noise draw for [`SpecModel::loss`] and tests.
pub fn latent_noise(seed: u64) -> [f64; LATENT_DIM] {
    let mut r = rng(seed);
    std::array::from_fn(|_| StandardNormal.sample(&mut r))
}
