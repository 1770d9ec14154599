use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{one_hot, ConditionalBase, CouplingLayer, ScalarLayer, Transport};
use crate::error::{Error, Result};
use crate::grad::{MlpInit, NodeId, ParamStore, Tape};
use crate::reference::ReferenceDist;
use crate::rng::{derive_seed, stream};

pub const CHECKPOINT_FORMAT: &str = "transport-rj-flow";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape of a flow stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub dim: usize,
    pub depth: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Number of model contexts; 0 for an unconditional stack.
    #[serde(default)]
    pub contexts: usize,
    /// Use a learned context-dependent Gaussian base (requires `contexts > 0`).
    #[serde(default)]
    pub conditional_base: bool,
    #[serde(default)]
    pub reference: ReferenceDist,
    /// Size of the copied block in even layers; defaults to `ceil(dim / 2)`.
    #[serde(default)]
    pub split: Option<usize>,
    /// Swap the copied and transformed blocks on every other layer.
    #[serde(default = "default_true")]
    pub alternate: bool,
    #[serde(default = "default_init")]
    pub init: MlpInit,
}

fn default_hidden() -> Vec<usize> {
    vec![256]
}
fn default_true() -> bool {
    true
}
fn default_init() -> MlpInit {
    MlpInit::ZeroOutput
}

impl FlowSpec {
    pub fn new(dim: usize, depth: usize) -> Self {
        FlowSpec {
            dim,
            depth,
            hidden: default_hidden(),
            contexts: 0,
            conditional_base: false,
            reference: ReferenceDist::StandardGaussian,
            split: None,
            alternate: true,
            init: MlpInit::ZeroOutput,
        }
    }

    /// Context-conditioned stack with a learned conditional base.
    pub fn conditional(dim: usize, depth: usize, contexts: usize) -> Self {
        FlowSpec {
            contexts,
            conditional_base: true,
            ..Self::new(dim, depth)
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn split_index(&self) -> usize {
        self.split.unwrap_or(self.dim.div_ceil(2))
    }

    /// Copied coordinates of layer `i`.
    pub fn identity_block(&self, i: usize) -> Vec<usize> {
        let d0 = self.split_index();
        if self.alternate && i % 2 == 1 {
            (d0..self.dim).collect()
        } else {
            (0..d0).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        if self.dim == 0 {
            return Err(Error::Config("flow dim must be at least 1".into()));
        }
        if self.dim == 1 && self.contexts > 0 {
            return Err(Error::Config("conditional flows need dim >= 2".into()));
        }
        if self.conditional_base && self.contexts == 0 {
            return Err(Error::Config("conditional_base requires contexts > 0".into()));
        }
        if self.conditional_base && self.reference != ReferenceDist::StandardGaussian {
            return Err(Error::Config("conditional_base requires a standard-gaussian reference".into()));
        }
        if self.dim > 1 {
            let d0 = self.split_index();
            if d0 == 0 || d0 >= self.dim {
                return Err(Error::Config(format!("split {d0} must satisfy 1 <= split < {}", self.dim)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum Layer {
    Coupling(CouplingLayer),
    Scalar(ScalarLayer),
}

/// A composition of coupling (or scalar) layers over an optional learned
/// conditional base. All parameters live in one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FlowStack {
    spec: FlowSpec,
    layers: Vec<Layer>,
    base: Option<ConditionalBase>,
    store: ParamStore,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: FlowSpec,
    seed: u64,
    masks: Vec<Vec<usize>>,
    params: ParamStore,
}

impl FlowStack {
    /// Build a stack at its initial state. With the default initialization
    /// every layer is the identity.
    pub fn new(spec: FlowSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(derive_seed(seed, 0x5eed_f10e), 0);
        let mut store = ParamStore::new();
        let base = spec.conditional_base.then(|| {
            ConditionalBase::new(&mut store, spec.dim, spec.contexts, &spec.hidden, spec.init, &mut rng)
        });
        let mut layers = Vec::with_capacity(spec.depth);
        for i in 0..spec.depth {
            let prefix = format!("layer{i}");
            layers.push(if spec.dim == 1 {
                Layer::Scalar(ScalarLayer::new(&mut store, &prefix))
            } else {
                Layer::Coupling(CouplingLayer::new(
                    &mut store,
                    &prefix,
                    spec.dim,
                    spec.identity_block(i),
                    spec.contexts,
                    &spec.hidden,
                    spec.init,
                    &mut rng,
                )?)
            });
        }
        Ok(FlowStack {
            spec,
            layers,
            base,
            store,
            seed,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn base(&self) -> Option<&ConditionalBase> {
        self.base.as_ref()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn context_node(&self, tape: &mut Tape, rows: usize, ctx: Option<usize>) -> Result<Option<NodeId>> {
        match (ctx, self.spec.contexts) {
            (None, 0) => Ok(None),
            (Some(k), n) if n > 0 => {
                if k >= n {
                    return Err(Error::UnknownModel(k));
                }
                Ok(Some(tape.leaf(one_hot(k, n, rows))))
            }
            (None, _) => Err(Error::Contract("conditional flow needs a model context".into())),
            (Some(_), _) => Err(Error::Contract("unconditional flow given a model context".into())),
        }
    }

    /// Push or pull using parameters from `store` (which must share this
    /// stack's layout). Used for training and gradient checks.
    pub fn apply_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        v: NodeId,
        ctx: Option<usize>,
        inverse: bool,
    ) -> Result<(NodeId, NodeId)> {
        let (rows, cols) = tape.shape(v);
        if cols != self.spec.dim {
            return Err(Error::dim("flow stack", self.spec.dim, cols));
        }
        let c = self.context_node(tape, rows, ctx)?;
        let mut cur = v;
        let mut total: Option<NodeId> = None;
        let mut add = |tape: &mut Tape, ld: NodeId| {
            total = Some(match total {
                Some(t) => tape.add(t, ld),
                None => ld,
            });
        };
        let step = |layer: &Layer, tape: &mut Tape, cur: NodeId| match layer {
            Layer::Coupling(l) => l.apply(store, tape, cur, c, inverse),
            Layer::Scalar(l) => l.apply(store, tape, cur, inverse),
        };
        if !inverse {
            if let (Some(base), Some(k)) = (&self.base, ctx) {
                let (z0, ld) = base.apply(store, tape, cur, k, false)?;
                cur = z0;
                add(tape, ld);
            }
            for layer in &self.layers {
                let (x, ld) = step(layer, tape, cur)?;
                cur = x;
                add(tape, ld);
            }
        } else {
            for layer in self.layers.iter().rev() {
                let (z, ld) = step(layer, tape, cur)?;
                cur = z;
                add(tape, ld);
            }
            if let (Some(base), Some(k)) = (&self.base, ctx) {
                let (eps, ld) = base.apply(store, tape, cur, k, true)?;
                cur = eps;
                add(tape, ld);
            }
        }
        let total = match total {
            Some(t) => t,
            None => tape.leaf(ndarray::Array2::zeros((rows, 1))),
        };
        Ok((cur, total))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            seed: self.seed,
            masks: (0..self.spec.depth).map(|i| self.spec.identity_block(i)).collect(),
            params: self.store.clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut stack = FlowStack::new(ck.spec, ck.seed).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let masks: Vec<Vec<usize>> = (0..stack.spec.depth).map(|i| stack.spec.identity_block(i)).collect();
        if masks != ck.masks {
            return Err(Error::Checkpoint("mask layout does not match spec".into()));
        }
        stack.store.check_compatible(&ck.params)?;
        stack.store = ck.params;
        Ok(stack)
    }

    /// Load and require the stack to have shape `expected`.
    pub fn load_expecting(path: &Path, expected: &FlowSpec) -> Result<Self> {
        let stack = Self::load(path)?;
        if &stack.spec != expected {
            return Err(Error::Checkpoint(format!(
                "{} holds a flow of dim {} depth {}, expected dim {} depth {}",
                path.display(),
                stack.spec.dim,
                stack.spec.depth,
                expected.dim,
                expected.depth
            )));
        }
        Ok(stack)
    }
}

impl Transport for FlowStack {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn contexts(&self) -> usize {
        self.spec.contexts
    }

    fn reference(&self) -> ReferenceDist {
        self.spec.reference
    }

    fn push(&self, tape: &mut Tape, z: NodeId, ctx: Option<usize>) -> Result<(NodeId, NodeId)> {
        self.apply_with(&self.store, tape, z, ctx, false)
    }

    fn pull(&self, tape: &mut Tape, x: NodeId, ctx: Option<usize>) -> Result<(NodeId, NodeId)> {
        self.apply_with(&self.store, tape, x, ctx, true)
    }
}
