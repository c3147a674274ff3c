use super::upsample::interpolation_weights;
use super::{FpLayer, NetworkConfig, PftStage, PtdStage, PtuStage};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tensor::{LbrLayer, ParamStore, Rng, Session, Var};

/// Point-branch upsampling stage.
#[derive(Clone, Debug)]
pub enum DecoderStage {
    Ptu(PtuStage),
    Fp(FpLayer),
}

impl DecoderStage {
    fn forward(&self, s: &mut Session, coarse: &[Point3], cf: Var, skip: &[Point3], sf: Var) -> Result<Var> {
        match self {
            DecoderStage::Ptu(p) => p.forward(s, coarse, cf, skip, sf),
            DecoderStage::Fp(f) => f.forward(s, coarse, cf, skip, sf),
        }
    }
}

#[derive(Clone, Debug)]
enum OutputFusion {
    Pft(PftStage),
    /// Interpolate pseudo-point features onto the raw points, concatenate, LBR.
    Concat(LbrLayer),
}

/// Raw-point and pseudo-point encoders in lockstep with fusion links, their
/// decoders, and a final fusion back at raw-point resolution.
#[derive(Clone, Debug)]
pub struct TwoStreamNet {
    pub config: NetworkConfig,
    pub raw_down: Vec<PtdStage>,
    pub ppc_down: Vec<PtdStage>,
    pub links: Vec<Option<PftStage>>,
    /// `raw_up[s]` restores level `s` from level `s + 1`.
    pub raw_up: Vec<DecoderStage>,
    pub ppc_up: Vec<FpLayer>,
    fusion: OutputFusion,
}

#[derive(Clone, Debug)]
pub struct TwoStreamOutput {
    /// Fused features at the raw input points, `[N × C_out]`.
    pub feats: Var,
    /// Point-branch coordinates per level, level 0 being the input.
    pub raw_levels: Vec<Vec<Point3>>,
    pub ppc_levels: Vec<Vec<Point3>>,
    /// Point-branch decoder output before the final fusion, `[N × C_out]`.
    pub raw_decoded: Var,
    /// Pseudo-point decoder output before the final fusion, `[M × C_out]`.
    pub ppc_decoded: Var,
}

impl TwoStreamNet {
    pub fn new(store: &mut ParamStore, config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let norm = cfg.norm_mode;
        let stages = cfg.num_stages();
        let attn_ptd = cfg.use_ptd.then_some(cfg.attn_modes.ptd);
        let c_dec = cfg.output_channels();
        let width = |level: usize, input: usize| if level == 0 { input } else { cfg.channels[level - 1] };

        let mut raw_down = Vec::new();
        let mut ppc_down = Vec::new();
        let mut links = Vec::new();
        for st in 0..stages {
            raw_down.push(PtdStage::new(
                store,
                &format!("raw_down{st}"),
                cfg.raw_stages[st],
                cfg.l_group,
                width(st, cfg.raw_in_channels),
                cfg.channels[st],
                attn_ptd,
                norm,
                rng,
            ));
            ppc_down.push(PtdStage::new(
                store,
                &format!("ppc_down{st}"),
                cfg.ppc_stages[st],
                cfg.l_group,
                width(st, cfg.ppc_in_channels),
                cfg.channels[st],
                attn_ptd,
                norm,
                rng,
            ));
            links.push(cfg.link_active(st).then(|| {
                PftStage::new(
                    store,
                    &format!("link{st}"),
                    (cfg.channels[st], cfg.raw_stages[st]),
                    (cfg.channels[st], cfg.ppc_stages[st]),
                    cfg.channels[st],
                    cfg.combine_mode,
                    cfg.attn_modes.pft,
                    norm,
                    rng,
                )
            }));
        }

        let mut raw_up = Vec::new();
        let mut ppc_up = Vec::new();
        for st in 0..stages {
            let c_coarse = if st + 1 == stages { cfg.channels[st] } else { c_dec };
            let raw_skip = width(st, cfg.raw_in_channels);
            raw_up.push(if cfg.use_ptu {
                DecoderStage::Ptu(PtuStage::new(
                    store,
                    &format!("raw_up{st}"),
                    c_coarse,
                    raw_skip,
                    cfg.l_group,
                    cfg.attn_modes.ptu,
                    norm,
                    rng,
                ))
            } else {
                DecoderStage::Fp(FpLayer::new(store, &format!("raw_up{st}"), c_coarse, raw_skip, &[c_dec, c_dec], norm, rng))
            });
            ppc_up.push(FpLayer::new(
                store,
                &format!("ppc_up{st}"),
                c_coarse,
                width(st, cfg.ppc_in_channels),
                &[c_dec, c_dec],
                norm,
                rng,
            ));
        }

        let fusion = if cfg.use_pft {
            OutputFusion::Pft(PftStage::new(
                store,
                "fuse",
                (c_dec, cfg.raw_points),
                (c_dec, cfg.ppc_points),
                c_dec,
                cfg.combine_mode,
                cfg.attn_modes.pft,
                norm,
                rng,
            ))
        } else {
            OutputFusion::Concat(LbrLayer::new(store, "fuse", 2 * c_dec, c_dec, norm, rng))
        };
        Ok(TwoStreamNet {
            config,
            raw_down,
            ppc_down,
            links,
            raw_up,
            ppc_up,
            fusion,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.config.output_channels()
    }

    pub fn forward(
        &self,
        s: &mut Session,
        raw_coords: &[Point3],
        raw_feats: Var,
        ppc_coords: &[Point3],
        ppc_feats: Var,
    ) -> Result<TwoStreamOutput> {
        let cfg = &self.config;
        let rv = s.g.value(raw_feats);
        let pv = s.g.value(ppc_feats);
        if raw_coords.len() != cfg.raw_points
            || rv.rows() != cfg.raw_points
            || rv.cols() != cfg.raw_in_channels
            || ppc_coords.len() != cfg.ppc_points
            || pv.rows() != cfg.ppc_points
            || pv.cols() != cfg.ppc_in_channels
        {
            return Err(Error::Config(format!(
                "network expects {}×{} raw and {}×{} pseudo inputs, got {} coords/{:?} and {} coords/{:?}",
                cfg.raw_points,
                cfg.raw_in_channels,
                cfg.ppc_points,
                cfg.ppc_in_channels,
                raw_coords.len(),
                rv.shape(),
                ppc_coords.len(),
                pv.shape()
            )));
        }

        let mut raw_levels = vec![raw_coords.to_vec()];
        let mut ppc_levels = vec![ppc_coords.to_vec()];
        let mut raw_skips = vec![raw_feats];
        let mut ppc_skips = vec![ppc_feats];
        for st in 0..cfg.num_stages() {
            let r = self.raw_down[st].forward(s, &raw_levels[st], raw_skips[st])?;
            let p = self.ppc_down[st].forward(s, &ppc_levels[st], ppc_skips[st])?;
            let (rf, pf) = match &self.links[st] {
                Some(link) => {
                    let o = link.forward(s, r.feats, p.feats)?;
                    (o.raw, o.pseu)
                }
                None => (r.feats, p.feats),
            };
            raw_levels.push(r.coords);
            ppc_levels.push(p.coords);
            raw_skips.push(rf);
            ppc_skips.push(pf);
        }

        let top = cfg.num_stages();
        let mut raw = raw_skips[top];
        let mut ppc = ppc_skips[top];
        for st in (0..top).rev() {
            raw = self.raw_up[st].forward(s, &raw_levels[st + 1], raw, &raw_levels[st], raw_skips[st])?;
            ppc = self.ppc_up[st].forward(s, &ppc_levels[st + 1], ppc, &ppc_levels[st], ppc_skips[st])?;
        }

        let feats = match &self.fusion {
            OutputFusion::Pft(pft) => pft.forward(s, raw, ppc)?.raw,
            OutputFusion::Concat(lbr) => {
                let moved = s.g.mix_rows(ppc, interpolation_weights(raw_coords, ppc_coords)?)?;
                let x = s.g.concat_cols(&[raw, moved])?;
                lbr.forward(s, x)?
            }
        };
        Ok(TwoStreamOutput {
            feats,
            raw_levels,
            ppc_levels,
            raw_decoded: raw,
            ppc_decoded: ppc,
        })
    }
}
