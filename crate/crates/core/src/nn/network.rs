//! Network specifications and the uniform forward/gradient interface over the
//! five supported variants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::film::{FilmCache, FilmQ};
use super::history::{HistoryBatch, HistoryCache, HistoryQ};
use super::layers::{init_segments, Activation, LayoutBuilder, Mlp, MlpCache, Segment};
use super::schedule_net::{ScheduleCache, ScheduleNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TimeOnlySchedule,
    BaselineQ,
    FilmQ,
    HistoryQ,
    ModelBasedSchedule,
}

impl Variant {
    pub fn is_q(self) -> bool {
        matches!(
            self,
            Variant::BaselineQ | Variant::FilmQ | Variant::HistoryQ
        )
    }
}

/// Complete architecture description; the parameter count is a function of this alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub activation: Activation,
    /// Trunk widths (baseline), base-trunk widths (FiLM, last = H), static-branch
    /// widths (history) or MLP widths (schedule nets).
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub price_hidden: Vec<usize>,
    #[serde(default)]
    pub residual_blocks: usize,
    #[serde(default = "one")]
    pub lambda_film: f64,
    #[serde(default = "point_one")]
    pub rho_res: f64,
    #[serde(default = "point_one")]
    pub eta_init: f64,
    #[serde(default = "one")]
    pub c_p_init: f64,
    #[serde(default)]
    pub embed_dim: usize,
    #[serde(default)]
    pub heads: usize,
    #[serde(default)]
    pub encoder_layers: usize,
    #[serde(default)]
    pub ff_dim: usize,
    #[serde(default)]
    pub n_positions: usize,
    #[serde(default)]
    pub fusion_hidden: Vec<usize>,
    #[serde(default)]
    pub n_slices: usize,
}

fn one() -> f64 {
    1.0
}

fn point_one() -> f64 {
    0.1
}

impl NetworkSpec {
    fn blank(variant: Variant, activation: Activation, hidden: Vec<usize>) -> Self {
        Self {
            variant,
            activation,
            hidden,
            price_hidden: Vec::new(),
            residual_blocks: 0,
            lambda_film: 1.0,
            rho_res: 0.1,
            eta_init: 0.1,
            c_p_init: 1.0,
            embed_dim: 0,
            heads: 0,
            encoder_layers: 0,
            ff_dim: 0,
            n_positions: 0,
            fusion_hidden: Vec::new(),
            n_slices: 0,
        }
    }

    pub fn baseline_q() -> Self {
        Self::blank(Variant::BaselineQ, Activation::Silu, vec![128; 5])
    }

    pub fn film_q() -> Self {
        Self {
            price_hidden: vec![64, 64],
            residual_blocks: 3,
            ..Self::blank(Variant::FilmQ, Activation::Silu, vec![128, 128])
        }
    }

    pub fn history_q(n_slices: usize) -> Self {
        Self {
            embed_dim: 64,
            heads: 2,
            encoder_layers: 2,
            ff_dim: 128,
            n_positions: n_slices,
            fusion_hidden: vec![128, 128],
            ..Self::blank(Variant::HistoryQ, Activation::Gelu, vec![64, 64])
        }
    }

    pub fn time_only_schedule(n_slices: usize) -> Self {
        Self {
            n_slices,
            ..Self::blank(Variant::TimeOnlySchedule, Activation::Silu, vec![64, 64])
        }
    }

    pub fn model_based_schedule(n_slices: usize) -> Self {
        Self {
            n_slices,
            ..Self::blank(Variant::ModelBasedSchedule, Activation::Silu, vec![64, 64])
        }
    }

    pub fn for_variant(variant: Variant, n_slices: usize) -> Self {
        match variant {
            Variant::BaselineQ => Self::baseline_q(),
            Variant::FilmQ => Self::film_q(),
            Variant::HistoryQ => Self::history_q(n_slices),
            Variant::TimeOnlySchedule => Self::time_only_schedule(n_slices),
            Variant::ModelBasedSchedule => Self::model_based_schedule(n_slices),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errs.push("hidden must be non-empty with positive widths".to_string());
        }
        match self.variant {
            Variant::FilmQ => {
                if self.price_hidden.is_empty() || self.price_hidden.contains(&0) {
                    errs.push("price_hidden must be non-empty with positive widths".into());
                }
                if !(self.c_p_init > 0.0) || !(self.eta_init > 0.0) {
                    errs.push("c_p_init and eta_init must be > 0".into());
                }
                if !(self.lambda_film > 0.0) || !(self.rho_res > 0.0) {
                    errs.push("lambda_film and rho_res must be > 0".into());
                }
            }
            Variant::HistoryQ => {
                if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
                    errs.push("embed_dim must be a positive multiple of heads".into());
                }
                if self.ff_dim == 0 || self.n_positions == 0 || self.encoder_layers == 0 {
                    errs.push("ff_dim, n_positions and encoder_layers must be >= 1".into());
                }
                if self.fusion_hidden.contains(&0) {
                    errs.push("fusion_hidden widths must be positive".into());
                }
            }
            Variant::TimeOnlySchedule | Variant::ModelBasedSchedule => {
                if self.n_slices == 0 {
                    errs.push("n_slices must be >= 1".into());
                }
            }
            Variant::BaselineQ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("network: {}", errs.join("; "))))
        }
    }
}

/// Flat parameter vector; structured views come from [`Network::segments`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

/// Rows of normalized `(price, inventory, time, action)` features, plus the
/// encoded histories each row refers to for the history-aware variant.
#[derive(Debug, Clone, Copy)]
pub struct QBatch<'a> {
    pub features: &'a [f64],
    pub history: Option<(&'a HistoryBatch, &'a [usize])>,
}

impl<'a> QBatch<'a> {
    pub fn plain(features: &'a [f64]) -> Self {
        Self {
            features,
            history: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.features.len() / 4
    }
}

#[derive(Debug, Clone)]
pub enum QCache {
    Baseline(MlpCache),
    Film(FilmCache),
    History(HistoryCache),
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Baseline(Mlp),
    Film(FilmQ),
    History(HistoryQ),
    Schedule(ScheduleNet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    segments: Vec<Segment>,
    n_params: usize,
    kind: Kind,
}

impl Network {
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut lb = LayoutBuilder::new();
        let kind = match spec.variant {
            Variant::BaselineQ => {
                let mut dims = vec![4];
                dims.extend(&spec.hidden);
                dims.push(1);
                Kind::Baseline(Mlp::new(&mut lb, "trunk", &dims, spec.activation, false))
            }
            Variant::FilmQ => Kind::Film(FilmQ::build(&mut lb, spec)),
            Variant::HistoryQ => Kind::History(HistoryQ::build(&mut lb, spec)),
            Variant::TimeOnlySchedule => Kind::Schedule(ScheduleNet::build(
                &mut lb,
                &spec.hidden,
                spec.activation,
                spec.n_slices,
                spec.n_slices,
            )),
            Variant::ModelBasedSchedule => Kind::Schedule(ScheduleNet::build(
                &mut lb,
                &spec.hidden,
                spec.activation,
                spec.n_slices,
                spec.n_slices - 1,
            )),
        };
        let (segments, n_params) = lb.finish();
        Ok(Self {
            spec: spec.clone(),
            segments,
            n_params,
            kind,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Named slices of the parameter vector.
    pub fn views<'a>(&'a self, params: &'a NetworkParams) -> Vec<(&'a str, &'a [f64])> {
        self.segments
            .iter()
            .map(|s| (s.name.as_str(), &params.values[s.offset..s.offset + s.len]))
            .collect()
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> NetworkParams {
        NetworkParams {
            values: init_segments(&self.segments, self.n_params, rng),
        }
    }

    pub fn film(&self) -> Option<&FilmQ> {
        match &self.kind {
            Kind::Film(f) => Some(f),
            _ => None,
        }
    }

    pub fn history(&self) -> Option<&HistoryQ> {
        match &self.kind {
            Kind::History(h) => Some(h),
            _ => None,
        }
    }

    pub fn schedule_net(&self) -> Option<&ScheduleNet> {
        match &self.kind {
            Kind::Schedule(s) => Some(s),
            _ => None,
        }
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params,
                p.len()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &QBatch) -> Result<()> {
        if batch.features.len() % 4 != 0 {
            return Err(Error::Shape(format!(
                "feature buffer length {} is not a multiple of 4",
                batch.features.len()
            )));
        }
        Ok(())
    }

    fn history_of<'a>(&self, batch: &QBatch<'a>) -> Result<(&'a HistoryBatch, &'a [usize])> {
        batch.history.ok_or_else(|| {
            Error::Shape("history-aware network requires a history batch and mask".into())
        })
    }

    /// Q-values for every row, with the activations needed by [`Network::q_backward`].
    pub fn q_forward(&self, params: &NetworkParams, batch: &QBatch) -> Result<(Vec<f64>, QCache)> {
        let p = &params.values;
        self.check_params(p)?;
        self.check_batch(batch)?;
        let rows = batch.rows();
        match &self.kind {
            Kind::Baseline(m) => {
                let (q, c) = m.forward(p, batch.features, rows);
                Ok((q, QCache::Baseline(c)))
            }
            Kind::Film(f) => {
                let (q, c) = f.forward(p, batch.features, rows);
                Ok((q, QCache::Film(c)))
            }
            Kind::History(h) => {
                let (hist, idx) = self.history_of(batch)?;
                let (q, c) = h.forward(p, batch.features, hist, idx)?;
                Ok((q, QCache::History(c)))
            }
            Kind::Schedule(_) => Err(Error::Shape(
                "schedule network has no Q-value interface".into(),
            )),
        }
    }

    /// Q-values without retaining activations.
    pub fn q_values(&self, params: &NetworkParams, batch: &QBatch) -> Result<Vec<f64>> {
        let p = &params.values;
        self.check_params(p)?;
        self.check_batch(batch)?;
        match &self.kind {
            Kind::Baseline(m) => Ok(m.output_only(p, batch.features, batch.rows())),
            Kind::History(h) => {
                let (hist, idx) = self.history_of(batch)?;
                if idx.len() != batch.rows() {
                    return Err(Error::Shape(
                        "row index length differs from feature rows".into(),
                    ));
                }
                let enc = h.encode(p, hist)?;
                Ok(h.forward_encoded(p, batch.features, &enc, idx))
            }
            _ => self.q_forward(params, batch).map(|(q, _)| q),
        }
    }

    /// Single-state convenience: `history` holds `(tokens, mask)` for one state.
    pub fn q_value(
        &self,
        params: &NetworkParams,
        features: &[f64; 4],
        history: Option<(&[f64], &[bool])>,
    ) -> Result<f64> {
        let hb;
        let idx = [0usize];
        let batch = match history {
            Some((tokens, mask)) => {
                let n = mask.len();
                if tokens.len() != 2 * n {
                    return Err(Error::Shape(
                        "tokens must hold two values per position".into(),
                    ));
                }
                let mut b = HistoryBatch::new(n);
                b.push(tokens, mask);
                hb = b;
                QBatch {
                    features,
                    history: Some((&hb, &idx)),
                }
            }
            None => QBatch::plain(features),
        };
        Ok(self.q_values(params, &batch)?[0])
    }

    /// Accumulates `d(sum_r upstream_r * Q_r)/d(params)` into `grads` and
    /// optionally returns the gradient w.r.t. the `rows x 4` features.
    pub fn q_backward(
        &self,
        params: &NetworkParams,
        cache: &QCache,
        upstream: &[f64],
        grads: &mut [f64],
        want_dx: bool,
    ) -> Result<Option<Vec<f64>>> {
        let p = &params.values;
        self.check_params(p)?;
        if grads.len() != self.n_params {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, expected {}",
                grads.len(),
                self.n_params
            )));
        }
        let rows = match cache {
            QCache::Baseline(c) => c.rows,
            QCache::Film(_) | QCache::History(_) => upstream.len(),
        };
        if upstream.len() != rows {
            return Err(Error::Shape(format!(
                "upstream has {} entries for {rows} rows",
                upstream.len()
            )));
        }
        Ok(match (&self.kind, cache) {
            (Kind::Baseline(m), QCache::Baseline(c)) => m.backward(p, grads, c, upstream, want_dx),
            (Kind::Film(f), QCache::Film(c)) => f.backward(p, grads, c, upstream, want_dx),
            (Kind::History(h), QCache::History(c)) => h.backward(p, grads, c, upstream, want_dx),
            _ => {
                return Err(Error::Shape(
                    "cache does not belong to this network variant".into(),
                ))
            }
        })
    }

    /// Raw per-slice outputs `z_t` of a schedule network.
    pub fn schedule_forward(&self, params: &NetworkParams) -> Result<(Vec<f64>, ScheduleCache)> {
        self.check_params(&params.values)?;
        match &self.kind {
            Kind::Schedule(s) => Ok(s.forward(&params.values)),
            _ => Err(Error::Shape("not a schedule network".into())),
        }
    }

    pub fn schedule_backward(
        &self,
        params: &NetworkParams,
        cache: &ScheduleCache,
        dz: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        self.check_params(&params.values)?;
        match &self.kind {
            Kind::Schedule(s) => {
                if dz.len() != s.n_out || grads.len() != self.n_params {
                    return Err(Error::Shape(format!(
                        "expected {} upstream values",
                        s.n_out
                    )));
                }
                s.backward(&params.values, grads, cache, dz);
                Ok(())
            }
            _ => Err(Error::Shape("not a schedule network".into())),
        }
    }
}
