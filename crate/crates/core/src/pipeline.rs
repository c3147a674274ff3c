//! The assembled detector: image encoder, pseudo-point generation, two-stream
//! network and proposal head, with training and inference entry points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{iou_bev, nms, DetectionResult};
use crate::frustum::{
    build_frustum, frustum_var, generate_pseudo_points, pixel_to_grid, select_foreground, EncoderConfig, EncoderOutput,
    ForegroundSelection, ImageEncoder, ImageEvidence, PseudoPointSet, SamplingMode,
};
use crate::fusion::{NetworkConfig, RpnHead, RpnOutput, TwoStreamNet, TwoStreamOutput};
use crate::geometry::{LidBinning, Point3};
use crate::kitti::SceneSample;
use crate::losses::{depth_loss, rpn_loss, total_loss, DepthTargets, LossWeights, RpnTargets};
use crate::tensor::{Adam, AdamConfig, ParamStore, Rng, Session, Tensor, Var};

/// Width of the raw point features: `(x, y, z, intensity)`.
pub const RAW_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub encoder: EncoderConfig,
    pub binning: LidBinning,
    pub sampling: SamplingMode,
    /// Points handed to foreground selection (pseudo points are drawn from these).
    pub foreground_points: usize,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
    /// Minimum class score for a point to emit a candidate box.
    pub score_threshold: f64,
    pub nms_train: f64,
    pub nms_test: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            network: NetworkConfig::desk(),
            encoder: EncoderConfig::default(),
            binning: LidBinning::default(),
            sampling: SamplingMode::Kps,
            foreground_points: 256,
            loss: LossWeights::default(),
            optimizer: AdamConfig::default(),
            score_threshold: 0.3,
            nms_train: 0.8,
            nms_test: 0.85,
        }
    }
}

impl PipelineConfig {
    /// Tiny model for gradient checks: the miniature network, a 4-channel
    /// encoder and 8 depth bins. Pairs with [`SyntheticSceneSpec::miniature`](crate::kitti::SyntheticSceneSpec::miniature).
    pub fn miniature() -> Self {
        let network = NetworkConfig {
            ppc_in_channels: 4,
            ..NetworkConfig::miniature()
        };
        PipelineConfig {
            network,
            encoder: EncoderConfig {
                block_strides: vec![2, 2],
                block_channels: vec![4, 4],
                feat_channels: 4,
            },
            binning: LidBinning {
                bins: 8,
                ..LidBinning::default()
            },
            foreground_points: 24,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.binning.validate()?;
        self.loss.validate()?;
        if self.network.raw_in_channels != RAW_FEATURES {
            return Err(Error::Config(format!("raw_in_channels must be {RAW_FEATURES} (x, y, z, intensity)")));
        }
        if self.network.ppc_in_channels != self.encoder.feat_channels {
            return Err(Error::Config(format!(
                "ppc_in_channels {} must equal the encoder feature width {}",
                self.network.ppc_in_channels, self.encoder.feat_channels
            )));
        }
        if self.foreground_points < self.network.ppc_points {
            return Err(Error::Config("foreground_points must be at least ppc_points".into()));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_train", self.nms_train),
            ("nms_test", self.nms_test),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// A scene with all parameter-independent routing precomputed.
#[derive(Clone, Debug)]
pub struct Frame {
    pub scene: SceneSample,
    /// Scene points fed to the point branch, ascending.
    pub raw_index: Vec<usize>,
    pub raw_coords: Vec<Point3>,
    /// `[N × 4]` raw point features.
    pub raw_feats: Tensor,
    pub selection: ForegroundSelection,
    pub depth_targets: DepthTargets,
}

/// Samples the point-branch input, selects foreground points and builds depth targets.
pub fn prepare_frame(config: &PipelineConfig, scene: SceneSample, seed: u64) -> Result<Frame> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let n = config.network.raw_points;
    let total = scene.points.len();
    if total < n || total < config.foreground_points {
        return Err(Error::Contract(format!(
            "scene has {total} points, need {n} raw and {} for selection",
            config.foreground_points
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut order);
    let mut raw_index = order[..n].to_vec();
    raw_index.sort_unstable();
    let intensity = scene.points.feats.as_ref();
    let mut feats = Vec::with_capacity(n * RAW_FEATURES);
    let raw_coords: Vec<Point3> = raw_index.iter().map(|&i| scene.points.coords[i]).collect();
    for (&i, p) in raw_index.iter().zip(&raw_coords) {
        feats.extend_from_slice(p);
        feats.push(intensity.map_or(0.0, |f| f.row(i)[0]));
    }
    let raw_feats = Tensor::new(vec![n, RAW_FEATURES], feats)?;

    let selection = select_foreground(&scene.points, &scene.mask, &scene.calib, config.foreground_points, &mut rng)?;
    let depth_targets = depth_targets(config, &scene, &selection)?;
    Ok(Frame {
        scene,
        raw_index,
        raw_coords,
        raw_feats,
        selection,
        depth_targets,
    })
}

/// One target per feature cell hit by a foreground point (first point wins);
/// falls back to all selected points when there is no foreground.
fn depth_targets(config: &PipelineConfig, scene: &SceneSample, sel: &ForegroundSelection) -> Result<DepthTargets> {
    let (img_h, img_w) = (scene.image.shape()[0], scene.image.shape()[1]);
    let (hf, wf) = config.encoder.grid_size(img_h, img_w)?;
    let stride = config.encoder.stride();
    let source = if sel.num_foreground > 0 { sel.foreground() } else { &sel.indices[..] };
    let mut seen = vec![false; hf * wf];
    let mut t = DepthTargets {
        cells: Vec::new(),
        gt_bin: Vec::new(),
        gt_res: Vec::new(),
    };
    for &i in source {
        let Ok((u, v, depth)) = scene.calib.lidar_to_image(&scene.points.coords[i]) else {
            continue;
        };
        if !(0.0..img_w as f64).contains(&u) || !(0.0..img_h as f64).contains(&v) {
            continue;
        }
        let x = (pixel_to_grid(u, stride).round().max(0.0) as usize).min(wf - 1);
        let y = (pixel_to_grid(v, stride).round().max(0.0) as usize).min(hf - 1);
        if std::mem::replace(&mut seen[y * wf + x], true) {
            continue;
        }
        let code = config.binning.encode(depth);
        t.cells.push([x, y]);
        t.gt_bin.push(code.bin);
        t.gt_res.push(code.residual);
    }
    if t.is_empty() {
        return Err(Error::Contract("no selected point projects into the image".into()));
    }
    Ok(t)
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub encoder: EncoderOutput,
    pub pseudo: PseudoPointSet,
    /// `[M × C]` pseudo-point features on the tape.
    pub pseudo_feats: Var,
    pub network: TwoStreamOutput,
    pub rpn: RpnOutput,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub depth: Var,
    pub depth_bin: Var,
    pub depth_res: Var,
    pub rpn: Var,
    pub cls: Var,
    pub reg: Var,
    pub vote: Var,
    pub no_foreground: bool,
}

/// Scalar loss components of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub depth: f64,
    pub depth_bin: f64,
    pub depth_res: f64,
    pub rpn: f64,
    pub cls: f64,
    pub reg: f64,
    pub vote: f64,
}

impl LossValues {
    pub const COMPONENTS: [&'static str; 8] = ["total", "depth", "depth_bin", "depth_res", "rpn", "cls", "reg", "vote"];

    pub fn components(&self) -> [f64; 8] {
        [self.total, self.depth, self.depth_bin, self.depth_res, self.rpn, self.cls, self.reg, self.vote]
    }

    fn mean(all: &[LossValues]) -> LossValues {
        let n = all.len() as f64;
        let sum = |f: fn(&LossValues) -> f64| all.iter().map(f).sum::<f64>() / n;
        LossValues {
            total: sum(|v| v.total),
            depth: sum(|v| v.depth),
            depth_bin: sum(|v| v.depth_bin),
            depth_res: sum(|v| v.depth_res),
            rpn: sum(|v| v.rpn),
            cls: sum(|v| v.cls),
            reg: sum(|v| v.reg),
            vote: sum(|v| v.vote),
        }
    }
}

impl LossVars {
    pub fn values(&self, s: &Session) -> LossValues {
        let v = |x: Var| s.g.value(x).item();
        LossValues {
            total: v(self.total),
            depth: v(self.depth),
            depth_bin: v(self.depth_bin),
            depth_res: v(self.depth_res),
            rpn: v(self.rpn),
            cls: v(self.cls),
            reg: v(self.reg),
            vote: v(self.vote),
        }
    }
}

/// The full model and its parameters.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: PipelineConfig,
    pub store: ParamStore,
    pub encoder: ImageEncoder,
    pub net: TwoStreamNet,
    pub rpn: RpnHead,
}

impl Detector {
    pub fn new(config: PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let encoder = ImageEncoder::new(&mut store, config.encoder.clone(), config.binning.bins, &mut rng)?;
        let net = TwoStreamNet::new(&mut store, config.network.clone(), &mut rng)?;
        let rpn = RpnHead::new(&mut store, "rpn", net.output_channels(), config.network.rpn_hidden, &mut rng);
        Ok(Detector {
            config,
            store,
            encoder,
            net,
            rpn,
        })
    }

    /// Places pseudo points from the current image-branch predictions.
    pub fn route(&self, s: &Session, frame: &Frame, enc: &EncoderOutput) -> Result<PseudoPointSet> {
        let features = enc.feature_grid(s, self.config.encoder.stride())?;
        let depth = enc.depth(s)?;
        let offsets = enc.offset_grid(s)?;
        let frustum = build_frustum(&features, &depth)?;
        let shape = frame.scene.image.shape();
        generate_pseudo_points(
            &frame.scene.points,
            &frame.selection,
            &frame.scene.calib,
            &ImageEvidence {
                features: &features,
                depth: &depth,
                offsets: &offsets,
                frustum: &frustum,
            },
            &self.config.binning,
            (shape[0], shape[1]),
            self.config.network.ppc_points,
            self.config.sampling,
        )
    }

    /// Full forward pass. With `routing` given, pseudo points are placed
    /// exactly as there instead of from the current predictions.
    pub fn forward(&self, s: &mut Session, frame: &Frame, routing: Option<&PseudoPointSet>) -> Result<Forward> {
        let encoder = self.encoder.forward(s, &frame.scene.image)?;
        let pseudo = match routing {
            Some(p) => p.clone(),
            None => self.route(s, frame, &encoder)?,
        };
        let volume = frustum_var(s, encoder.feats, encoder.bin_logits)?;
        let shape = s.g.value(volume).shape().to_vec();
        let volume = s.g.reshape(volume, &[shape[0] * shape[1], shape[2]])?;
        let stencils = pseudo.stencils.iter().map(|st| st.weights.clone()).collect();
        let pseudo_feats = s.g.mix_rows(volume, stencils)?;
        let raw_feats = s.constant(frame.raw_feats.clone())?;
        let network = self.net.forward(s, &frame.raw_coords, raw_feats, &pseudo.coords, pseudo_feats)?;
        let rpn = self.rpn.forward(s, network.feats)?;
        Ok(Forward {
            encoder,
            pseudo,
            pseudo_feats,
            network,
            rpn,
        })
    }

    /// Proposal-head supervision from the current predictions (treated as data).
    pub fn targets(&self, s: &Session, frame: &Frame, fwd: &Forward) -> Result<RpnTargets> {
        let props = self.rpn.proposals(s, &fwd.rpn, &frame.raw_coords, self.config.score_threshold)?;
        RpnTargets::build(&frame.raw_coords, &props.votes, &frame.scene.gt_boxes(), Some(&props))
    }

    pub fn loss(&self, s: &mut Session, fwd: &Forward, frame: &Frame, targets: &RpnTargets) -> Result<LossVars> {
        let w = &self.config.loss;
        let enc = &fwd.encoder;
        let d = depth_loss(s, enc.bin_logits, enc.residuals, enc.width, &frame.depth_targets, w)?;
        let r = rpn_loss(s, &fwd.rpn, targets, w)?;
        Ok(LossVars {
            total: total_loss(s, d.total, r.total, w)?,
            depth: d.total,
            depth_bin: d.bin,
            depth_res: d.residual,
            rpn: r.total,
            cls: r.cls,
            reg: r.reg,
            vote: r.vote,
            no_foreground: r.no_foreground,
        })
    }

    /// Loss values and parameter gradients on one frame.
    pub fn gradients(&self, frame: &Frame) -> Result<(LossValues, Vec<Tensor>)> {
        let mut s = Session::new(&self.store);
        let fwd = self.forward(&mut s, frame, None)?;
        let targets = self.targets(&s, frame, &fwd)?;
        let l = self.loss(&mut s, &fwd, frame, &targets)?;
        let values = l.values(&s);
        s.backward(l.total)?;
        Ok((values, s.grads()))
    }

    /// One optimizer step on the mean gradient over `frames`.
    pub fn train_step(&mut self, frames: &[Frame], adam: &mut Adam) -> Result<LossValues> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("train_step"));
        }
        let mut values = Vec::with_capacity(frames.len());
        let mut grads: Option<Vec<Tensor>> = None;
        for f in frames {
            let (v, g) = self.gradients(f)?;
            values.push(v);
            grads = Some(match grads {
                None => g,
                Some(mut acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                    }
                    acc
                }
            });
        }
        let mut grads = grads.unwrap_or_default();
        let scale = 1.0 / frames.len() as f64;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= scale));
        adam.step(&mut self.store, &grads)?;
        Ok(LossValues::mean(&values))
    }

    /// Candidate boxes after test-time NMS, best first.
    pub fn detect(&self, frame: &Frame) -> Result<Vec<DetectionResult>> {
        let mut s = Session::new(&self.store);
        let fwd = self.forward(&mut s, frame, None)?;
        let props = self.rpn.proposals(&s, &fwd.rpn, &frame.raw_coords, self.config.score_threshold)?;
        let dets: Vec<DetectionResult> = props
            .boxes
            .iter()
            .zip(&props.scores)
            .zip(&props.classes)
            .map(|((&bbox, &score), &class)| DetectionResult { bbox, score, class })
            .collect();
        Ok(nms(&dets, self.config.nms_test)?.into_iter().map(|i| dets[i]).collect())
    }
}

/// Outcome of repeated training on a fixed set of frames.
#[derive(Clone, Debug)]
pub struct OverfitReport {
    /// Loss before each step.
    pub losses: Vec<LossValues>,
    /// Detections on the first frame after training.
    pub detections: Vec<DetectionResult>,
    /// BEV IoU of the top detection with its best-matching ground truth.
    pub top_iou: Option<f64>,
}

impl OverfitReport {
    /// `1 − last/first` of the total loss.
    pub fn reduction(&self) -> f64 {
        match (self.losses.first(), self.losses.last()) {
            (Some(a), Some(b)) if a.total > 0.0 => 1.0 - b.total / a.total,
            _ => 0.0,
        }
    }
}

/// Trains `steps` Adam steps on `frames`, calling `on_step` after each.
pub fn overfit(
    detector: &mut Detector,
    frames: &[Frame],
    steps: usize,
    on_step: impl FnMut(usize, &LossValues),
) -> Result<OverfitReport> {
    let lr = detector.config.optimizer.lr;
    overfit_scheduled(detector, frames, steps, |_| lr, on_step)
}

/// [`overfit`] with the learning rate of each 0-based step taken from `lr_at`.
pub fn overfit_scheduled(
    detector: &mut Detector,
    frames: &[Frame],
    steps: usize,
    lr_at: impl Fn(usize) -> f64,
    mut on_step: impl FnMut(usize, &LossValues),
) -> Result<OverfitReport> {
    let mut adam = Adam::new(detector.config.optimizer, &detector.store);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        adam.config.lr = lr_at(step);
        let v = detector.train_step(frames, &mut adam)?;
        on_step(step, &v);
        losses.push(v);
    }
    let first = frames.first().ok_or(Error::EmptyInput("overfit"))?;
    let detections = detector.detect(first)?;
    let top_iou = match detections.first() {
        Some(top) => {
            let mut best = 0.0f64;
            for (b, _) in first.scene.gt_boxes() {
                best = best.max(iou_bev(&top.bbox, &b)?);
            }
            Some(best)
        }
        None => None,
    };
    Ok(OverfitReport {
        losses,
        detections,
        top_iou,
    })
}
