use rand::Rng;

use super::params::{ParamGroup, ParamSink, ParamSinkMut};
use super::profile::{BackboneProfile, BlockSpec, StageBody, StageSpec, UnitSpec};
use crate::error::Result;
use crate::nn::ops::{relu, relu_backward};
use crate::nn::{ChannelAffine, Conv2d, MaxPool};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub conv: Conv2d,
    pub affine: Option<ChannelAffine>,
}

struct UnitTrace {
    input: Tensor,
    conv_out: Option<Tensor>,
}

impl Unit {
    fn init<R: Rng + ?Sized>(spec: &UnitSpec, gain: f64, rng: &mut R) -> Self {
        let mut conv = Conv2d::he_normal(spec.conv, rng);
        conv.weight.iter_mut().for_each(|w| *w *= gain);
        Self {
            conv,
            affine: spec.affine.then(|| ChannelAffine::identity(spec.conv.out_channels)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.zeros_like(),
            affine: self.affine.as_ref().map(|a| ChannelAffine::zeros(a.channels())),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, UnitTrace)> {
        let y = self.conv.forward(x)?;
        match &self.affine {
            Some(a) => {
                let z = a.forward(&y);
                Ok((z, UnitTrace { input: x.clone(), conv_out: Some(y) }))
            }
            None => Ok((y, UnitTrace { input: x.clone(), conv_out: None })),
        }
    }

    fn backward(&self, trace: &UnitTrace, upstream: &Tensor, grad: &mut Unit, want: bool) -> Result<Option<Tensor>> {
        let g = match (&self.affine, &trace.conv_out) {
            (Some(a), Some(y)) => a.backward(y, upstream, grad.affine.as_mut().expect("mirrored")),
            _ => upstream.clone(),
        };
        self.conv.backward(&trace.input, &g, &mut grad.conv, want)
    }

    fn visit(&self, path: &str, sink: &mut ParamSink<'_>) {
        sink(&format!("{path}/conv/weight"), ParamGroup::Backbone, &self.conv.weight);
        if !self.conv.bias.is_empty() {
            sink(&format!("{path}/conv/bias"), ParamGroup::Backbone, &self.conv.bias);
        }
        if let Some(a) = &self.affine {
            sink(&format!("{path}/affine/scale"), ParamGroup::Backbone, &a.scale);
            sink(&format!("{path}/affine/shift"), ParamGroup::Backbone, &a.shift);
        }
    }

    fn visit_mut(&mut self, path: &str, sink: &mut ParamSinkMut<'_>) {
        sink(&format!("{path}/conv/weight"), ParamGroup::Backbone, &mut self.conv.weight);
        if !self.conv.bias.is_empty() {
            sink(&format!("{path}/conv/bias"), ParamGroup::Backbone, &mut self.conv.bias);
        }
        if let Some(a) = &mut self.affine {
            sink(&format!("{path}/affine/scale"), ParamGroup::Backbone, &mut a.scale);
            sink(&format!("{path}/affine/shift"), ParamGroup::Backbone, &mut a.shift);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub units: Vec<Unit>,
    pub shortcut: Option<Unit>,
}

struct BlockTrace {
    units: Vec<UnitTrace>,
    /// Rectified outputs of every unit except the last.
    inner: Vec<Tensor>,
    shortcut: Option<UnitTrace>,
    output: Tensor,
}

impl ResidualBlock {
    fn init<R: Rng + ?Sized>(spec: &BlockSpec, rng: &mut R) -> Self {
        let last = spec.units.len() - 1;
        Self {
            units: spec
                .units
                .iter()
                .enumerate()
                // damp the residual branch so un-normalized stacks start near identity
                .map(|(i, u)| Unit::init(u, if i == last && !u.affine { 0.5 } else { 1.0 }, rng))
                .collect(),
            shortcut: spec.shortcut.as_ref().map(|u| Unit::init(u, 0.5_f64.sqrt(), rng)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            units: self.units.iter().map(Unit::zeros_like).collect(),
            shortcut: self.shortcut.as_ref().map(Unit::zeros_like),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockTrace)> {
        let mut traces = Vec::with_capacity(self.units.len());
        let mut inner = Vec::with_capacity(self.units.len() - 1);
        let mut h = x.clone();
        for (i, u) in self.units.iter().enumerate() {
            let (y, t) = u.forward(&h)?;
            traces.push(t);
            if i + 1 < self.units.len() {
                h = relu(&y);
                inner.push(h.clone());
            } else {
                h = y;
            }
        }
        let (skip, sc_trace) = match &self.shortcut {
            Some(u) => {
                let (s, t) = u.forward(x)?;
                (s, Some(t))
            }
            None => (x.clone(), None),
        };
        h.add_assign(&skip);
        let out = relu(&h);
        Ok((
            out.clone(),
            BlockTrace {
                units: traces,
                inner,
                shortcut: sc_trace,
                output: out,
            },
        ))
    }

    fn backward(&self, trace: &BlockTrace, upstream: &Tensor, grad: &mut ResidualBlock) -> Result<Tensor> {
        let g = relu_backward(&trace.output, upstream);
        let mut branch = g.clone();
        for i in (0..self.units.len()).rev() {
            let d = self.units[i]
                .backward(&trace.units[i], &branch, &mut grad.units[i], true)?
                .expect("input gradient requested");
            branch = if i > 0 { relu_backward(&trace.inner[i - 1], &d) } else { d };
        }
        let skip = match (&self.shortcut, &trace.shortcut) {
            (Some(u), Some(t)) => u
                .backward(t, &g, grad.shortcut.as_mut().expect("mirrored"), true)?
                .expect("input gradient requested"),
            _ => g,
        };
        branch.add_assign(&skip);
        Ok(branch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageLayers {
    Plain(Vec<Unit>),
    Residual(Vec<ResidualBlock>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub pool: Option<MaxPool>,
    pub layers: StageLayers,
}

enum LayersTrace {
    /// Unit traces and the rectified output of each unit.
    Plain(Vec<UnitTrace>, Vec<Tensor>),
    Residual(Vec<BlockTrace>),
}

pub(super) struct StageTrace {
    pool: Option<((usize, usize, usize), Vec<usize>)>,
    layers: LayersTrace,
}

impl Stage {
    fn init<R: Rng + ?Sized>(spec: &StageSpec, rng: &mut R) -> Self {
        let layers = match &spec.body {
            StageBody::Plain(units) => StageLayers::Plain(units.iter().map(|u| Unit::init(u, 1.0, rng)).collect()),
            StageBody::Residual(blocks) => {
                StageLayers::Residual(blocks.iter().map(|b| ResidualBlock::init(b, rng)).collect())
            }
        };
        Self { pool: spec.pool, layers }
    }

    fn zeros_like(&self) -> Self {
        Self {
            pool: self.pool,
            layers: match &self.layers {
                StageLayers::Plain(u) => StageLayers::Plain(u.iter().map(Unit::zeros_like).collect()),
                StageLayers::Residual(b) => StageLayers::Residual(b.iter().map(ResidualBlock::zeros_like).collect()),
            },
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, StageTrace)> {
        let (mut h, pool) = match &self.pool {
            Some(p) => {
                let (y, arg) = p.forward(x)?;
                (y, Some((x.shape(), arg)))
            }
            None => (x.clone(), None),
        };
        let layers = match &self.layers {
            StageLayers::Plain(units) => {
                let mut traces = Vec::with_capacity(units.len());
                let mut acts = Vec::with_capacity(units.len());
                for u in units {
                    let (y, t) = u.forward(&h)?;
                    h = relu(&y);
                    traces.push(t);
                    acts.push(h.clone());
                }
                LayersTrace::Plain(traces, acts)
            }
            StageLayers::Residual(blocks) => {
                let mut traces = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (y, t) = b.forward(&h)?;
                    h = y;
                    traces.push(t);
                }
                LayersTrace::Residual(traces)
            }
        };
        Ok((h, StageTrace { pool, layers }))
    }

    fn backward(&self, trace: &StageTrace, upstream: &Tensor, grad: &mut Stage, want: bool) -> Result<Option<Tensor>> {
        let mut g = upstream.clone();
        match (&self.layers, &trace.layers, &mut grad.layers) {
            (StageLayers::Plain(units), LayersTrace::Plain(traces, acts), StageLayers::Plain(gu)) => {
                for i in (0..units.len()).rev() {
                    let d = relu_backward(&acts[i], &g);
                    let need = want || i > 0 || trace.pool.is_some();
                    match units[i].backward(&traces[i], &d, &mut gu[i], need)? {
                        Some(dx) => g = dx,
                        None => return Ok(None),
                    }
                }
            }
            (StageLayers::Residual(blocks), LayersTrace::Residual(traces), StageLayers::Residual(gb)) => {
                for i in (0..blocks.len()).rev() {
                    g = blocks[i].backward(&traces[i], &g, &mut gb[i])?;
                }
            }
            _ => unreachable!("trace and gradient mirror the stage"),
        }
        Ok(Some(match &trace.pool {
            Some((shape, arg)) => MaxPool::backward(*shape, arg, &g),
            None => g,
        }))
    }
}

/// The five backbone stages; each stage's output is a side-output tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub stages: Vec<Stage>,
}

pub(super) struct BackboneTrace {
    stages: Vec<StageTrace>,
}

impl Backbone {
    pub fn init<R: Rng + ?Sized>(profile: &BackboneProfile, rng: &mut R) -> Self {
        Self {
            stages: profile.stages.iter().map(|s| Stage::init(s, rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stages: self.stages.iter().map(Stage::zeros_like).collect(),
        }
    }

    /// Returns the five taps.
    pub(super) fn forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, BackboneTrace)> {
        let mut taps: Vec<Tensor> = Vec::with_capacity(self.stages.len());
        let mut traces = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let input = taps.last().unwrap_or(x);
            let (y, t) = stage.forward(input)?;
            taps.push(y);
            traces.push(t);
        }
        Ok((taps, BackboneTrace { stages: traces }))
    }

    /// `tap_grads[s]` is the gradient arriving at tap `s` from the decoder.
    pub(super) fn backward(
        &self,
        trace: &BackboneTrace,
        mut tap_grads: Vec<Tensor>,
        grad: &mut Backbone,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let mut carry: Option<Tensor> = None;
        for s in (0..self.stages.len()).rev() {
            let mut g = std::mem::replace(&mut tap_grads[s], Tensor::zeros(0, 0, 0));
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            let want = s > 0 || want_input_grad;
            carry = self.stages[s].backward(&trace.stages[s], &g, &mut grad.stages[s], want)?;
        }
        Ok(carry)
    }

    pub(super) fn visit(&self, sink: &mut ParamSink<'_>) {
        for (s, stage) in self.stages.iter().enumerate() {
            match &stage.layers {
                StageLayers::Plain(units) => {
                    for (i, u) in units.iter().enumerate() {
                        u.visit(&format!("backbone/r{}/unit{i}", s + 1), sink);
                    }
                }
                StageLayers::Residual(blocks) => {
                    for (b, block) in blocks.iter().enumerate() {
                        for (i, u) in block.units.iter().enumerate() {
                            u.visit(&format!("backbone/r{}/block{b}/unit{i}", s + 1), sink);
                        }
                        if let Some(u) = &block.shortcut {
                            u.visit(&format!("backbone/r{}/block{b}/shortcut", s + 1), sink);
                        }
                    }
                }
            }
        }
    }

    pub(super) fn visit_mut(&mut self, sink: &mut ParamSinkMut<'_>) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            match &mut stage.layers {
                StageLayers::Plain(units) => {
                    for (i, u) in units.iter_mut().enumerate() {
                        u.visit_mut(&format!("backbone/r{}/unit{i}", s + 1), sink);
                    }
                }
                StageLayers::Residual(blocks) => {
                    for (b, block) in blocks.iter_mut().enumerate() {
                        for (i, u) in block.units.iter_mut().enumerate() {
                            u.visit_mut(&format!("backbone/r{}/block{b}/unit{i}", s + 1), sink);
                        }
                        if let Some(u) = &mut block.shortcut {
                            u.visit_mut(&format!("backbone/r{}/block{b}/shortcut", s + 1), sink);
                        }
                    }
                }
            }
        }
    }
}
