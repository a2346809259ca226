//! Network definitions: the peephole LSTM, the pedestrian movement network
//! with its bivariate-Gaussian head, per-cell scene LSTMs, the scene data
//! filter, and the baselines.

mod cells;
mod forward;
mod gaussian;
mod linear;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{init_uniform, AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scenegrid::{GridConfig, GridError};

pub use cells::{embed, lstm_step, nll_loss, pedestrian_step, scene_data_filter, scene_step, PedestrianState, PedestrianVars};
pub use forward::{forward_window, ForwardOptions, Mode, SceneUse, TargetForecast, WindowOutput};
pub use gaussian::{advance_position, sample_offset, GaussianParams, HEAD_SIZE};
pub use linear::linear_baseline;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("window has no targets")]
    EmptyBatch,
    #[error("window needs at least one observed instant and two in total (t_obs {t_obs}, length {len})")]
    WindowTooShort { t_obs: usize, len: usize },
    #[error("linear baseline needs at least 2 observed points, got {0}")]
    TooFewObserved(usize),
    #[error("grid bank has hidden size {bank} but the model uses {model}")]
    BankMismatch { bank: usize, model: usize },
    #[error("parameter `{name}`: {reason}")]
    Layout { name: String, reason: String },
}

/// Sizes shared by every learnable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub grid: GridConfig,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed: 64,
            hidden: 128,
            grid: GridConfig::default(),
        }
    }
}

/// Which network produces forecasts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelKind {
    /// Pedestrian LSTM coupled with the scene grid through the filter.
    #[default]
    Scene,
    /// Pedestrian LSTM alone.
    Vanilla,
}

impl ModelKind {
    pub fn scene_use(self) -> SceneUse {
        match self {
            ModelKind::Scene => SceneUse::Full,
            ModelKind::Vanilla => SceneUse::Off,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Scene => "scene",
            ModelKind::Vanilla => "vanilla",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scene" => Ok(ModelKind::Scene),
            "vanilla" => Ok(ModelKind::Vanilla),
            other => Err(format!("unknown model `{other}` (expected scene or vanilla)")),
        }
    }
}

/// Ids of one LSTM's gate matrices and biases. `*_x` act on the input,
/// `*_h` on the previous hidden state, `*_c` are peephole weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w_ix: ParamId,
    pub w_ih: ParamId,
    pub w_ic: ParamId,
    pub w_fx: ParamId,
    pub w_fh: ParamId,
    pub w_fc: ParamId,
    pub w_cx: ParamId,
    pub w_ch: ParamId,
    pub w_ox: ParamId,
    pub w_oh: ParamId,
    pub w_oc: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
}

/// Graph handles for one LSTM's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ix: Var,
    pub w_ih: Var,
    pub w_ic: Var,
    pub w_fx: Var,
    pub w_fh: Var,
    pub w_fc: Var,
    pub w_cx: Var,
    pub w_ch: Var,
    pub w_ox: Var,
    pub w_oh: Var,
    pub w_oc: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_c: Var,
    pub b_o: Var,
}

const LSTM_PARTS: [&str; 15] = [
    "w_ix", "w_ih", "w_ic", "w_fx", "w_fh", "w_fc", "w_cx", "w_ch", "w_ox", "w_oh", "w_oc", "b_i", "b_f", "b_c", "b_o",
];

impl LstmParams {
    fn from_ids(ids: &[ParamId]) -> Self {
        LstmParams {
            w_ix: ids[0],
            w_ih: ids[1],
            w_ic: ids[2],
            w_fx: ids[3],
            w_fh: ids[4],
            w_fc: ids[5],
            w_cx: ids[6],
            w_ch: ids[7],
            w_ox: ids[8],
            w_oh: ids[9],
            w_oc: ids[10],
            b_i: ids[11],
            b_f: ids[12],
            b_c: ids[13],
            b_o: ids[14],
        }
    }

    pub fn ids(&self) -> [ParamId; 15] {
        [
            self.w_ix, self.w_ih, self.w_ic, self.w_fx, self.w_fh, self.w_fc, self.w_cx, self.w_ch, self.w_ox,
            self.w_oh, self.w_oc, self.b_i, self.b_f, self.b_c, self.b_o,
        ]
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> LstmVars {
        let mut p = |id| g.param(id, store);
        LstmVars {
            w_ix: p(self.w_ix),
            w_ih: p(self.w_ih),
            w_ic: p(self.w_ic),
            w_fx: p(self.w_fx),
            w_fh: p(self.w_fh),
            w_fc: p(self.w_fc),
            w_cx: p(self.w_cx),
            w_ch: p(self.w_ch),
            w_ox: p(self.w_ox),
            w_oh: p(self.w_oh),
            w_oc: p(self.w_oc),
            b_i: p(self.b_i),
            b_f: p(self.b_f),
            b_c: p(self.b_c),
            b_o: p(self.b_o),
        }
    }
}

/// Every learnable tensor of the model, addressed by stable names.
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub dims: ModelDims,
    pub store: ParamStore,
    /// Offset embedding, `[E, 2]`, no bias.
    pub embed: ParamId,
    pub pedestrian: LstmParams,
    /// Output head `[5, H]` and its bias.
    pub head_w: ParamId,
    pub head_b: ParamId,
    /// One scene LSTM per grid cell; input is `[one-hot, hidden]`.
    pub scene: Vec<LstmParams>,
    /// Soft-filter map `[H, E + H]` and bias.
    pub filter_w: ParamId,
    pub filter_b: ParamId,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
}

fn lstm_slots(prefix: &str, input: usize, hidden: usize) -> Vec<Slot> {
    LSTM_PARTS
        .iter()
        .map(|part| {
            let shape = match &part[..3] {
                "w_i" | "w_f" | "w_c" | "w_o" if part.ends_with('x') => vec![hidden, input],
                _ if part.starts_with('w') => vec![hidden, hidden],
                _ => vec![hidden],
            };
            let fan_in = if part.ends_with('x') { input } else { hidden };
            Slot {
                name: format!("{prefix}.{part}"),
                shape,
                fan_in,
            }
        })
        .collect()
}

fn layout(dims: &ModelDims) -> Vec<Slot> {
    let (e, h) = (dims.embed, dims.hidden);
    let mut slots = vec![Slot {
        name: "embed.w".into(),
        shape: vec![e, 2],
        fan_in: 2,
    }];
    slots.extend(lstm_slots("ped", e, h));
    slots.push(Slot {
        name: "head.w".into(),
        shape: vec![HEAD_SIZE, h],
        fan_in: h,
    });
    slots.push(Slot {
        name: "head.b".into(),
        shape: vec![HEAD_SIZE],
        fan_in: h,
    });
    let scene_in = dims.grid.num_subcells() + h;
    for j in 0..dims.grid.num_cells() {
        slots.extend(lstm_slots(&format!("scene.{j}"), scene_in, h));
    }
    slots.push(Slot {
        name: "filter.w".into(),
        shape: vec![h, e + h],
        fan_in: e + h,
    });
    slots.push(Slot {
        name: "filter.b".into(),
        shape: vec![h],
        fan_in: e + h,
    });
    slots
}

impl ModelWeights {
    /// Seeded uniform initialization in `±1/sqrt(fan_in)`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for slot in layout(&dims) {
            let t = init_uniform(&slot.shape, slot.fan_in, &mut rng);
            store.add(slot.name, t).expect("layout names are unique");
        }
        Self::assemble(dims, store)
    }

    /// Wraps an existing store after checking it holds exactly the expected
    /// tensors with the expected shapes.
    pub fn from_store(dims: ModelDims, store: ParamStore) -> Result<Self, ModelError> {
        let slots = layout(&dims);
        for slot in &slots {
            let id = store.id(&slot.name).ok_or_else(|| ModelError::Layout {
                name: slot.name.clone(),
                reason: "missing".into(),
            })?;
            let shape = store.get(id).shape();
            if shape != slot.shape.as_slice() {
                return Err(ModelError::Layout {
                    name: slot.name.clone(),
                    reason: format!("expected shape {:?}, found {:?}", slot.shape, shape),
                });
            }
        }
        if store.len() != slots.len() {
            let known: std::collections::HashSet<&str> = slots.iter().map(|s| s.name.as_str()).collect();
            let extra = store
                .iter()
                .map(|(_, n, _)| n)
                .find(|n| !known.contains(n))
                .unwrap_or("?")
                .to_string();
            return Err(ModelError::Layout {
                name: extra,
                reason: "unknown tensor".into(),
            });
        }
        // Re-order into canonical layout so ids are predictable.
        let mut canonical = ParamStore::new();
        for slot in slots {
            let t = store.get(store.id(&slot.name).expect("checked")).clone();
            canonical.add(slot.name, t).expect("unique");
        }
        Ok(Self::assemble(dims, canonical))
    }

    fn assemble(dims: ModelDims, store: ParamStore) -> Self {
        let id = |name: &str| store.id(name).expect("layout name");
        let lstm = |prefix: &str| {
            let ids: Vec<ParamId> = LSTM_PARTS.iter().map(|p| id(&format!("{prefix}.{p}"))).collect();
            LstmParams::from_ids(&ids)
        };
        let scene = (0..dims.grid.num_cells()).map(|j| lstm(&format!("scene.{j}"))).collect();
        ModelWeights {
            dims,
            embed: id("embed.w"),
            pedestrian: lstm("ped"),
            head_w: id("head.w"),
            head_b: id("head.b"),
            scene,
            filter_w: id("filter.w"),
            filter_b: id("filter.b"),
            store,
        }
    }

    /// Parameters of the movement network proper: embedding and pedestrian LSTM.
    pub fn pedestrian_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        ids.extend(self.pedestrian.ids());
        ids
    }

    pub fn frozen_mask(&self, frozen: &[ParamId]) -> Vec<bool> {
        let mut mask = vec![false; self.store.len()];
        for id in frozen {
            mask[id.0] = true;
        }
        mask
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.store.id(name).map(|id| self.store.get(id))
    }
}
