//! Finite-difference gradient checks over ops, blocks and the miniature network.
//!
//! Every case builds a small parameter store, moves it to a generic point
//! (random inputs, jittered weights) and compares the tape against central
//! differences through a random projection of the block output.

use clap::ValueEnum;
use fusiondet::frustum::{frustum_var, ImageEncoder};
use fusiondet::fusion::{
    AttentionBlock, AttnMode, CombineMode, FpLayer, NetworkConfig, PftStage, PtdStage, PtuStage, RpnHead,
    RpnOutput, TwoStreamNet,
};
use fusiondet::geometry::{knn_group, trilinear_weights, Point3};
use fusiondet::kitti::{generate_scene, SyntheticSceneSpec};
use fusiondet::losses::{depth_loss, rpn_loss, DepthTargets, LossWeights, RpnTargets};
use fusiondet::pipeline::{prepare_frame, Detector, PipelineConfig};
use fusiondet::tensor::{
    gradcheck, GradcheckReport, LbrLayer, Linear, Mlp2, NormMode, ParamStore, Rng, Session, Tensor, Var,
};
use serde::{Deserialize, Serialize};

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Op,
    Stage,
    Network,
    All,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Op => "op",
            Scope::Stage => "stage",
            Scope::Network => "network",
            Scope::All => "all",
        }
    }

    fn includes(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

/// One parameter group of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub scope: &'static str,
    pub case: String,
    pub group: String,
    pub checked: usize,
    /// Entries passed over because they sat next to a kink.
    pub skipped: usize,
    pub max_abs_err: f64,
    pub rel_err: f64,
}

impl GradRow {
    pub fn passes(&self) -> bool {
        self.rel_err < GRAD_TOLERANCE
    }
}

pub const GRAD_CSV_HEADER: &str = "scope,case,group,checked,skipped,max_abs_err,rel_err,status";

pub fn to_csv(rows: &[GradRow]) -> String {
    let mut out = format!("{GRAD_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scope,
            r.case,
            r.group,
            r.checked,
            r.skipped,
            r.max_abs_err,
            r.rel_err,
            if r.passes() { "pass" } else { "fail" }
        ));
    }
    out
}

type Built = Box<dyn Fn(&mut Session) -> fusiondet::Result<Var>>;

struct Collector {
    rows: Vec<GradRow>,
    rng: Rng,
}

impl Collector {
    fn push(&mut self, scope: Scope, case: &str, report: GradcheckReport) {
        for g in report.groups {
            self.rows.push(GradRow {
                scope: scope.name(),
                case: case.to_string(),
                group: g.name,
                checked: g.checked,
                skipped: g.skipped,
                max_abs_err: g.max_abs_err,
                rel_err: g.rel_err,
            });
        }
    }

    fn check(&mut self, scope: Scope, case: &str, store: &ParamStore, f: Built, cap: Option<usize>) -> fusiondet::Result<()> {
        let report = gradcheck(store, f, cap, &mut self.rng)?;
        self.push(scope, case, report);
        Ok(())
    }
}

fn normal(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal() * scale).collect()).expect("non-empty shape")
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(0.5, 2.0)).collect()).expect("non-empty shape")
}

fn coords(rng: &mut Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.uniform(0.0, 8.0), rng.uniform(-3.0, 3.0), rng.uniform(-1.0, 1.0)])
        .collect()
}

fn jitter(store: &mut ParamStore, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.uniform(-0.1, 0.1));
    }
}

/// `Σ y ⊙ R` with `R` a fixed pseudo-random tensor of `y`'s shape.
fn project(s: &mut Session, y: Var, tag: u64) -> fusiondet::Result<Var> {
    let shape = s.g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = Rng::new(0x5eed ^ tag);
    let r = if shape.is_empty() {
        Tensor::scalar(rng.uniform(0.5, 1.5))
    } else {
        Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())?
    };
    let r = s.constant(r)?;
    let p = s.g.mul(y, r)?;
    s.g.sum(p)
}

fn op_cases(c: &mut Collector) -> fusiondet::Result<()> {
    type OpFn = fn(&mut Session, &[Var]) -> fusiondet::Result<Var>;
    let mut rng = Rng::new(100);
    let n = |rng: &mut Rng, s: &[usize]| normal(rng, s, 1.0);
    let cases: Vec<(&str, Vec<Tensor>, OpFn)> = vec![
        ("matmul", vec![n(&mut rng, &[3, 4]), n(&mut rng, &[4, 2])], |s, v| s.g.matmul(v[0], v[1])),
        ("transpose", vec![n(&mut rng, &[3, 4])], |s, v| s.g.transpose(v[0])),
        ("add", vec![n(&mut rng, &[3, 2]), n(&mut rng, &[3, 2])], |s, v| s.g.add(v[0], v[1])),
        ("sub", vec![n(&mut rng, &[3, 2]), n(&mut rng, &[3, 2])], |s, v| s.g.sub(v[0], v[1])),
        ("mul", vec![n(&mut rng, &[3, 2]), n(&mut rng, &[3, 2])], |s, v| s.g.mul(v[0], v[1])),
        ("add_row", vec![n(&mut rng, &[4, 3]), n(&mut rng, &[3])], |s, v| s.g.add_row(v[0], v[1])),
        ("mul_row", vec![n(&mut rng, &[4, 3]), n(&mut rng, &[3])], |s, v| s.g.mul_row(v[0], v[1])),
        ("scale", vec![n(&mut rng, &[2, 3])], |s, v| s.g.scale(v[0], -1.7)),
        ("add_scalar", vec![n(&mut rng, &[2, 3])], |s, v| s.g.add_scalar(v[0], 0.3)),
        ("relu", vec![n(&mut rng, &[4, 3])], |s, v| s.g.relu(v[0])),
        ("sigmoid", vec![n(&mut rng, &[4, 3])], |s, v| s.g.sigmoid(v[0])),
        ("exp", vec![n(&mut rng, &[4, 3])], |s, v| s.g.exp(v[0])),
        ("log", vec![positive(&mut rng, &[4, 3])], |s, v| s.g.log(v[0])),
        ("powf", vec![positive(&mut rng, &[4, 3])], |s, v| s.g.powf(v[0], 2.5)),
        ("smooth_l1", vec![normal(&mut rng, &[5, 3], 1.5)], |s, v| s.g.smooth_l1(v[0])),
        ("clamp", vec![n(&mut rng, &[5, 3])], |s, v| s.g.clamp(v[0], -0.5, 0.7)),
        ("softmax_rows", vec![n(&mut rng, &[3, 5])], |s, v| s.g.softmax(v[0], 1)),
        ("softmax_3d_axis1", vec![n(&mut rng, &[2, 4, 3])], |s, v| s.g.softmax(v[0], 1)),
        ("sum", vec![n(&mut rng, &[3, 4])], |s, v| s.g.sum(v[0])),
        ("mean", vec![n(&mut rng, &[3, 4])], |s, v| s.g.mean(v[0])),
        ("sum_axis0", vec![n(&mut rng, &[3, 4])], |s, v| s.g.sum_axis(v[0], 0)),
        ("sum_axis1_3d", vec![n(&mut rng, &[2, 3, 4])], |s, v| s.g.sum_axis(v[0], 1)),
        ("max_axis1_3d", vec![n(&mut rng, &[3, 4, 2])], |s, v| s.g.max_axis(v[0], 1)),
        ("gather_rows", vec![n(&mut rng, &[4, 3])], |s, v| s.g.gather_rows(v[0], &[2, 0, 2, 3, 1, 2])),
        ("mix_rows", vec![n(&mut rng, &[4, 3])], |s, v| {
            s.g.mix_rows(v[0], vec![vec![(0, 0.25), (3, 0.75)], vec![(1, 1.0)], vec![(2, 0.4), (1, 0.1), (0, 0.5)]])
        }),
        ("reshape", vec![n(&mut rng, &[4, 6])], |s, v| s.g.reshape(v[0], &[2, 3, 4])),
        ("concat_cols", vec![n(&mut rng, &[3, 2]), n(&mut rng, &[3, 4])], |s, v| s.g.concat_cols(&[v[0], v[1]])),
        ("slice_cols", vec![n(&mut rng, &[3, 6])], |s, v| s.g.slice_cols(v[0], 1, 4)),
        ("standardize_cols", vec![n(&mut rng, &[5, 3])], |s, v| s.g.standardize_cols(v[0], 1e-5)),
        ("outer_rows", vec![n(&mut rng, &[3, 4]), n(&mut rng, &[3, 2])], |s, v| s.g.outer_rows(v[0], v[1])),
    ];
    for (i, (name, inputs, op)) in cases.into_iter().enumerate() {
        let mut store = ParamStore::new();
        let ids: Vec<_> = inputs
            .into_iter()
            .enumerate()
            .map(|(k, t)| store.add(format!("{name}.in{k}"), t))
            .collect();
        let f: Built = Box::new(move |s| {
            let vars = ids.iter().map(|&id| s.param(id)).collect::<fusiondet::Result<Vec<_>>>()?;
            let y = op(s, &vars)?;
            project(s, y, i as u64)
        });
        c.check(Scope::Op, name, &store, f, None)?;
    }

    for (name, norm) in [("linear", None), ("lbr_standardize", Some(NormMode::PerPointStandardize)), ("lbr_identity", Some(NormMode::Identity)), ("mlp2", None)] {
        let mut store = ParamStore::new();
        let x = store.add("input", normal(&mut rng, &[6, 3], 1.0));
        let layer: Box<dyn Fn(&mut Session, Var) -> fusiondet::Result<Var>> = match (name, norm) {
            ("linear", _) => {
                let l = Linear::new(&mut store, "linear", 3, 4, &mut rng);
                Box::new(move |s, x| l.forward(s, x))
            }
            ("mlp2", _) => {
                let l = Mlp2::new(&mut store, "mlp", 3, 5, 2, &mut rng);
                Box::new(move |s, x| l.forward(s, x))
            }
            (_, Some(mode)) => {
                let l = LbrLayer::new(&mut store, "lbr", 3, 4, mode, &mut rng);
                Box::new(move |s, x| l.forward(s, x))
            }
            _ => unreachable!(),
        };
        jitter(&mut store, &mut rng);
        let f: Built = Box::new(move |s| {
            let xv = s.param(x)?;
            let y = layer(s, xv)?;
            project(s, y, 7)
        });
        c.check(Scope::Op, name, &store, f, None)?;
    }
    Ok(())
}

const STAGE_CAP: Option<usize> = Some(12);

fn stage_cases(c: &mut Collector) -> fusiondet::Result<()> {
    let mut rng = Rng::new(200);
    let norm = NormMode::PerPointStandardize;

    for mode in [AttnMode::Subtract, AttnMode::Multiply] {
        let mut store = ParamStore::new();
        let pts = coords(&mut rng, 10);
        let x = store.add("input", normal(&mut rng, &[10, 4], 1.0));
        let block = AttentionBlock::new(&mut store, "attn", 4, mode, norm, &mut rng);
        jitter(&mut store, &mut rng);
        let groups = knn_group(&pts, &pts, 4)?;
        let f: Built = Box::new(move |s| {
            let xv = s.param(x)?;
            let y = block.forward(s, &pts, xv, &groups)?;
            project(s, y, 1)
        });
        c.check(Scope::Stage, &format!("attention_{mode:?}").to_lowercase(), &store, f, STAGE_CAP)?;
    }

    for (tag, mode) in [("ptd_subtract", Some(AttnMode::Subtract)), ("ptd_multiply", Some(AttnMode::Multiply)), ("set_abstraction", None)] {
        let mut store = ParamStore::new();
        let pts = coords(&mut rng, 16);
        let x = store.add("input", normal(&mut rng, &[16, 3], 1.0));
        let stage = PtdStage::new(&mut store, "ptd", 8, 4, 3, 5, mode, norm, &mut rng);
        jitter(&mut store, &mut rng);
        let f: Built = Box::new(move |s| {
            let xv = s.param(x)?;
            let y = stage.forward(s, &pts, xv)?;
            project(s, y.feats, 2)
        });
        c.check(Scope::Stage, tag, &store, f, STAGE_CAP)?;
    }

    for mode in [AttnMode::Subtract, AttnMode::Multiply] {
        let mut store = ParamStore::new();
        let fine = coords(&mut rng, 12);
        let coarse = fine[..5].to_vec();
        let cf = store.add("coarse", normal(&mut rng, &[5, 4], 1.0));
        let sf = store.add("skip", normal(&mut rng, &[12, 3], 1.0));
        let stage = PtuStage::new(&mut store, "ptu", 4, 3, 4, mode, norm, &mut rng);
        jitter(&mut store, &mut rng);
        let f: Built = Box::new(move |s| {
            let (a, b) = (s.param(cf)?, s.param(sf)?);
            let y = stage.forward(s, &coarse, a, &fine, b)?;
            project(s, y, 3)
        });
        c.check(Scope::Stage, &format!("ptu_{mode:?}").to_lowercase(), &store, f, STAGE_CAP)?;
    }

    {
        let mut store = ParamStore::new();
        let l0 = coords(&mut rng, 14);
        let l1 = l0[..7].to_vec();
        let l2 = l0[..3].to_vec();
        let f2 = store.add("coarse", normal(&mut rng, &[3, 4], 1.0));
        let f1 = store.add("skip1", normal(&mut rng, &[7, 3], 1.0));
        let f0 = store.add("skip0", normal(&mut rng, &[14, 2], 1.0));
        let up1 = FpLayer::new(&mut store, "fp1", 4, 3, &[5, 4], norm, &mut rng);
        let up0 = FpLayer::new(&mut store, "fp0", 4, 2, &[4], norm, &mut rng);
        jitter(&mut store, &mut rng);
        let f: Built = Box::new(move |s| {
            let (a, b, d) = (s.param(f2)?, s.param(f1)?, s.param(f0)?);
            let y = up1.forward(s, &l2, a, &l1, b)?;
            let y = up0.forward(s, &l1, y, &l0, d)?;
            project(s, y, 4)
        });
        c.check(Scope::Stage, "fp_two_stacked", &store, f, STAGE_CAP)?;
    }

    for mode in [AttnMode::Multiply, AttnMode::Subtract] {
        for combine in [CombineMode::Subtract, CombineMode::Add, CombineMode::Concat] {
            let mut store = ParamStore::new();
            let a = store.add("raw", normal(&mut rng, &[6, 4], 1.0));
            let b = store.add("pseudo", normal(&mut rng, &[5, 3], 1.0));
            let stage = PftStage::new(&mut store, "pft", (4, 6), (3, 5), 4, combine, mode, norm, &mut rng);
            jitter(&mut store, &mut rng);
            let f: Built = Box::new(move |s| {
                let (x, y) = (s.param(a)?, s.param(b)?);
                let out = stage.forward(s, x, y)?;
                let p = project(s, out.raw, 5)?;
                let q = project(s, out.pseu, 6)?;
                s.g.add(p, q)
            });
            c.check(Scope::Stage, &format!("pft_{mode:?}_{combine:?}").to_lowercase(), &store, f, STAGE_CAP)?;
        }
    }

    {
        let mut store = ParamStore::new();
        let config = fusiondet::frustum::EncoderConfig {
            block_strides: vec![2, 2],
            block_channels: vec![4, 4],
            feat_channels: 3,
        };
        let enc = ImageEncoder::new(&mut store, config, 5, &mut rng)?;
        jitter(&mut store, &mut rng);
        let n = 8 * 12 * 3;
        let image = Tensor::new(vec![8, 12, 3], (0..n).map(|_| rng.uniform(0.0, 1.0)).collect())?;
        let stencils: Vec<Vec<(usize, f64)>> = (0..4)
            .map(|_| {
                let (u, v, z) = (rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 4.0));
                trilinear_weights(2, 3, 5, u, v, z).weights
            })
            .collect();
        let f: Built = Box::new(move |s| {
            let out = enc.forward(s, &image)?;
            let mut total = project(s, out.feats, 11)?;
            for (k, v) in [out.bin_logits, out.residuals, out.offsets].into_iter().enumerate() {
                let p = project(s, v, 12 + k as u64)?;
                total = s.g.add(total, p)?;
            }
            let vol = frustum_var(s, out.feats, out.bin_logits)?;
            let shape = s.g.value(vol).shape().to_vec();
            let vol = s.g.reshape(vol, &[shape[0] * shape[1], shape[2]])?;
            let sampled = s.g.mix_rows(vol, stencils.clone())?;
            let p = project(s, sampled, 16)?;
            s.g.add(total, p)
        });
        c.check(Scope::Stage, "encoder_frustum_sampling", &store, f, STAGE_CAP)?;
    }

    {
        let mut store = ParamStore::new();
        let logits = store.add("bin_logits", normal(&mut rng, &[12, 6], 1.5));
        let res = store.add("residuals", normal(&mut rng, &[12, 6], 0.8));
        let targets = DepthTargets {
            cells: vec![[0, 0], [3, 1], [2, 2], [1, 0], [0, 2]],
            gt_bin: vec![1, 5, 0, 3, 3],
            gt_res: vec![0.2, 0.9, 0.5, 0.1, 0.7],
        };
        let w = LossWeights::default();
        let f: Built = Box::new(move |s| {
            let (l, r) = (s.param(logits)?, s.param(res)?);
            Ok(depth_loss(s, l, r, 4, &targets, &w)?.total)
        });
        c.check(Scope::Stage, "depth_loss", &store, f, None)?;
    }

    {
        let mut store = ParamStore::new();
        let feats = store.add("input", normal(&mut rng, &[8, 5], 1.0));
        let head = RpnHead::new(&mut store, "rpn", 5, 6, &mut rng);
        jitter(&mut store, &mut rng);
        let pts = coords(&mut rng, 8);
        let gt = fusiondet::eval::Box3D::new([pts[0][0], pts[0][1], pts[0][2]], [3.0, 2.0, 1.5], 0.4)?;
        let votes: Vec<Point3> = pts.iter().map(|p| [p[0] + 0.1, p[1] - 0.2, p[2]]).collect();
        let mut targets = RpnTargets::build(&pts, &votes, &[(gt, fusiondet::eval::ObjectClass::Car)], None)?;
        targets.cls_active[7] = false;
        let w = LossWeights::default();
        let f: Built = Box::new(move |s| {
            let x = s.param(feats)?;
            let out: RpnOutput = head.forward(s, x)?;
            Ok(rpn_loss(s, &out, &targets, &w)?.total)
        });
        c.check(Scope::Stage, "rpn_head_and_loss", &store, f, STAGE_CAP)?;
    }
    Ok(())
}

const NETWORK_CAP: Option<usize> = Some(4);

fn network_cases(c: &mut Collector) -> fusiondet::Result<()> {
    let mut rng = Rng::new(300);
    {
        let config = NetworkConfig::miniature();
        let mut store = ParamStore::new();
        let rf = store.add("raw_input", normal(&mut rng, &[config.raw_points, config.raw_in_channels], 1.0));
        let pf = store.add("pseudo_input", normal(&mut rng, &[config.ppc_points, config.ppc_in_channels], 1.0));
        let net = TwoStreamNet::new(&mut store, config.clone(), &mut rng)?;
        let head = RpnHead::new(&mut store, "rpn", net.output_channels(), config.rpn_hidden, &mut rng);
        jitter(&mut store, &mut rng);
        let (rc, pc) = (coords(&mut rng, config.raw_points), coords(&mut rng, config.ppc_points));
        let f: Built = Box::new(move |s| {
            let (a, b) = (s.param(rf)?, s.param(pf)?);
            let out = net.forward(s, &rc, a, &pc, b)?;
            let r = head.forward(s, out.feats)?;
            let mut total = project(s, r.cls_logits, 21)?;
            for (k, v) in [r.reg, r.vote_offsets].into_iter().enumerate() {
                let p = project(s, v, 22 + k as u64)?;
                total = s.g.add(total, p)?;
            }
            Ok(total)
        });
        c.check(Scope::Network, "two_stream_miniature", &store, f, NETWORK_CAP)?;
    }

    {
        let config = PipelineConfig::miniature();
        let scene = generate_scene(&SyntheticSceneSpec::miniature(1))?;
        let frame = prepare_frame(&config, scene, 1)?;
        let mut det = Detector::new(config, 1)?;
        jitter(&mut det.store, &mut rng);
        let (pseudo, targets) = {
            let mut s = Session::new(&det.store);
            let fwd = det.forward(&mut s, &frame, None)?;
            let t = det.targets(&s, &frame, &fwd)?;
            (fwd.pseudo, t)
        };
        let store = det.store.clone();
        let f: Built = Box::new(move |s| {
            let fwd = det.forward(s, &frame, Some(&pseudo))?;
            Ok(det.loss(s, &fwd, &frame, &targets)?.total)
        });
        c.check(Scope::Network, "pipeline_total_loss", &store, f, NETWORK_CAP)?;
    }
    Ok(())
}

/// Runs every case in `scope`.
pub fn run_gradient_suite(scope: Scope) -> fusiondet::Result<Vec<GradRow>> {
    let mut c = Collector {
        rows: Vec::new(),
        rng: Rng::new(7),
    };
    if scope.includes(Scope::Op) {
        op_cases(&mut c)?;
    }
    if scope.includes(Scope::Stage) {
        stage_cases(&mut c)?;
    }
    if scope.includes(Scope::Network) {
        network_cases(&mut c)?;
    }
    Ok(c.rows)
}
