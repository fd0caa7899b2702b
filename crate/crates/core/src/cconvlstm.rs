//! Consistent ConvLSTM: local bidirectional recurrence over the
//! (frame, object) grid plus a non-local skip to the reference frame.
//!
//! One level of the module owns a forward cell, optionally a backward cell,
//! and a fuse convolution:
//!
//! ```text
//! h_input = [ B2(h^{k-1}) | f'^k | S_{t-1,o}↓k ]
//! state   = [ h_spatial(o-1) | h_temporal(t∓1) ]     (2·C channels)
//! h_dir   = ConvLSTM(h_input, state, c_temporal)
//! h_out   = tanh(conv3x3([h_fwd | h_bwd | h_ref]))     (maps enabled by mode)
//! ```
//!
//! Cell memory travels along the temporal axis only; the spatial
//! predecessor contributes through its hidden state.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{convlstm_cell, Conv, ConvLstmParams};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Which consistency terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConsistencyMode {
    /// Forward recurrence only.
    ST,
    /// Forward and backward recurrence.
    STL,
    /// Forward recurrence plus the reference skip.
    STN,
    /// Both directions plus the reference skip.
    STC,
}

impl ConsistencyMode {
    pub const ALL: [ConsistencyMode; 4] = [
        ConsistencyMode::ST,
        ConsistencyMode::STL,
        ConsistencyMode::STN,
        ConsistencyMode::STC,
    ];

    pub fn bidirectional(self) -> bool {
        matches!(self, ConsistencyMode::STL | ConsistencyMode::STC)
    }

    pub fn nonlocal(self) -> bool {
        matches!(self, ConsistencyMode::STN | ConsistencyMode::STC)
    }

    /// Number of `C`-channel maps entering the fuse convolution.
    pub fn fuse_inputs(self) -> usize {
        1 + self.bidirectional() as usize + self.nonlocal() as usize
    }
}

impl fmt::Display for ConsistencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConsistencyMode::ST => "ST",
            ConsistencyMode::STL => "STL",
            ConsistencyMode::STN => "STN",
            ConsistencyMode::STC => "STC",
        };
        f.write_str(s)
    }
}

impl FromStr for ConsistencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ST" => Ok(ConsistencyMode::ST),
            "STL" => Ok(ConsistencyMode::STL),
            "STN" => Ok(ConsistencyMode::STN),
            "STC" => Ok(ConsistencyMode::STC),
            other => Err(Error::Usage(format!(
                "unknown consistency mode {other:?} (expected ST, STL, STN or STC)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }
}

/// Hidden and cell state of one direction at one (level, object).
#[derive(Clone, Copy, Debug)]
pub struct DirectionalState {
    pub h: Var,
    pub c: Var,
}

/// Parameters of one decoder level.
#[derive(Clone, Debug)]
pub struct LevelParams {
    pub forward: ConvLstmParams,
    pub backward: Option<ConvLstmParams>,
    pub fuse: Conv,
    pub mode: ConsistencyMode,
    pub width: usize,
}

impl LevelParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        level: usize,
        input_channels: usize,
        width: usize,
        mode: ConsistencyMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let forward = ConvLstmParams::register(
            store,
            &format!("dec.l{level}.fwd"),
            input_channels,
            2 * width,
            width,
            rng,
        )?;
        let backward = if mode.bidirectional() {
            Some(ConvLstmParams::register(
                store,
                &format!("dec.l{level}.bwd"),
                input_channels,
                2 * width,
                width,
                rng,
            )?)
        } else {
            None
        };
        let fuse = Conv::register(
            store,
            &format!("dec.l{level}.fuse"),
            mode.fuse_inputs() * width,
            width,
            3,
            1,
            rng,
        )?;
        Ok(LevelParams {
            forward,
            backward,
            fuse,
            mode,
            width,
        })
    }

    fn cell(&self, dir: Direction) -> Result<&ConvLstmParams> {
        match dir {
            Direction::Forward => Ok(&self.forward),
            Direction::Backward => self
                .backward
                .as_ref()
                .ok_or_else(|| Error::Mode(format!("mode {} has no backward direction", self.mode))),
        }
    }
}

/// Channel concatenation of the upsampled lower-level output, the projected
/// features and the single-channel previous mask (already at level
/// resolution). `h_below` is `None` at the deepest level.
pub fn build_input<T: Real>(g: &mut Graph<T>, h_below: Option<Var>, f_proj: Var, prev_mask: Var) -> Result<Var> {
    let (_, h, w) = g.value(f_proj).chw()?;
    let (mc, mh, mw) = g.value(prev_mask).chw()?;
    if mc != 1 || (mh, mw) != (h, w) {
        return Err(Error::shape(format!(
            "previous mask ({mc}, {mh}, {mw}) does not match level resolution ({h}, {w})"
        )));
    }
    match h_below {
        Some(below) => {
            let up = g.upsample2x(below)?;
            let (_, uh, uw) = g.value(up).chw()?;
            if (uh, uw) != (h, w) {
                return Err(Error::shape(format!(
                    "upsampled lower level is ({uh}, {uw}), level is ({h}, {w})"
                )));
            }
            g.concat(&[up, f_proj, prev_mask])
        }
        None => g.concat(&[f_proj, prev_mask]),
    }
}

/// Runs the direction's cell with `h_prev = [spatial.h | temporal.h]` and
/// `c_prev = temporal.c`; absent states are zero maps.
#[allow(clippy::too_many_arguments)]
pub fn directional_step<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    level: &LevelParams,
    dir: Direction,
    h_input: Var,
    spatial: Option<&DirectionalState>,
    temporal: Option<&DirectionalState>,
) -> Result<DirectionalState> {
    let cell = level.cell(dir)?;
    let (_, h, w) = g.value(h_input).chw()?;
    let width = level.width;
    let h_prev = match (spatial, temporal) {
        (None, None) => None,
        (s, t) => {
            let sh = match s.map(|s| s.h) {
                Some(v) => v,
                None => g.zeros(&[width, h, w]),
            };
            let th = match t.map(|t| t.h) {
                Some(v) => v,
                None => g.zeros(&[width, h, w]),
            };
            Some(g.concat(&[sh, th])?)
        }
    };
    let out = convlstm_cell(g, store, cell, h_input, h_prev, temporal.map(|t| t.c))?;
    Ok(DirectionalState { h: out.h, c: out.c })
}

/// `tanh(conv3x3(concat))` over the maps the mode enables, in the order
/// forward, backward, reference. Maps not used by the mode are ignored.
pub fn fuse<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    level: &LevelParams,
    mode: ConsistencyMode,
    h_fwd: Var,
    h_bwd: Option<Var>,
    h_ref: Option<Var>,
) -> Result<Var> {
    if mode != level.mode {
        return Err(Error::Mode(format!(
            "level parameters were built for {}, asked to fuse as {mode}",
            level.mode
        )));
    }
    let mut parts = vec![h_fwd];
    if mode.bidirectional() {
        parts.push(h_bwd.ok_or_else(|| Error::Mode(format!("{mode} needs a backward hidden state")))?);
    }
    if mode.nonlocal() {
        parts.push(h_ref.ok_or_else(|| Error::Mode(format!("{mode} needs a reference hidden state")))?);
    }
    let shape = g.value(h_fwd).shape().to_vec();
    if let Some(bad) = parts.iter().find(|&&p| g.value(p).shape() != shape.as_slice()) {
        return Err(Error::shape(format!(
            "fuse inputs {:?} vs {:?}",
            g.value(*bad).shape(),
            shape
        )));
    }
    let x = if parts.len() == 1 { h_fwd } else { g.concat(&parts)? };
    let y = level.fuse.forward(g, store, x)?;
    Ok(g.tanh(y))
}

/// Recurrent state of one sequence: temporal and spatial states per
/// direction and the frozen reference states.
pub struct StateBank {
    levels: usize,
    objects: usize,
    temporal: [Vec<Option<DirectionalState>>; 2],
    spatial: [Vec<Option<DirectionalState>>; 2],
    reference: Option<Vec<Vec<Var>>>,
}

impl StateBank {
    pub fn new(levels: usize, objects: usize) -> Self {
        StateBank {
            levels,
            objects,
            temporal: [vec![None; levels * objects], vec![None; levels * objects]],
            spatial: [vec![None; levels], vec![None; levels]],
            reference: None,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn objects(&self) -> usize {
        self.objects
    }

    /// Resets the spatial chain of `dir`: the first object of a frame sees
    /// zero spatial state.
    pub fn begin_frame(&mut self, dir: Direction) {
        self.spatial[dir.index()].iter_mut().for_each(|s| *s = None);
    }

    pub fn spatial(&self, dir: Direction, level: usize) -> Option<&DirectionalState> {
        self.spatial[dir.index()][level].as_ref()
    }

    pub fn temporal(&self, dir: Direction, level: usize, object: usize) -> Option<&DirectionalState> {
        self.temporal[dir.index()][level * self.objects + object].as_ref()
    }

    /// Records the new state as both the spatial predecessor of the next
    /// object and the temporal predecessor of the same object.
    pub fn update(&mut self, dir: Direction, level: usize, object: usize, state: DirectionalState) {
        self.spatial[dir.index()][level] = Some(state);
        self.temporal[dir.index()][level * self.objects + object] = Some(state);
    }

    /// Freezes reference states `[object][level]`; a bank is primed once.
    pub fn set_reference(&mut self, states: Vec<Vec<Var>>) -> Result<()> {
        if self.reference.is_some() {
            return Err(Error::State("reference states are already frozen".into()));
        }
        if states.len() != self.objects || states.iter().any(|s| s.len() != self.levels) {
            return Err(Error::State(format!(
                "expected {} × {} reference states",
                self.objects, self.levels
            )));
        }
        self.reference = Some(states);
        Ok(())
    }

    pub fn is_primed(&self) -> bool {
        self.reference.is_some()
    }

    pub fn reference(&self, object: usize) -> Result<&[Var]> {
        self.reference
            .as_ref()
            .map(|r| r[object].as_slice())
            .ok_or_else(|| Error::State("reference states have not been primed".into()))
    }

    pub fn reference_count(&self) -> usize {
        self.reference.as_ref().map_or(0, |r| r.iter().map(Vec::len).sum())
    }

    pub(crate) fn for_each_var(&self, mut f: impl FnMut(Var)) {
        let states = self.temporal.iter().chain(&self.spatial).flatten().flatten();
        for s in states {
            f(s.h);
            f(s.c);
        }
        self.reference.iter().flatten().flatten().for_each(|&v| f(v));
    }

    /// Rewrites every held variable, used when state moves to a new graph.
    pub(crate) fn map_vars(&mut self, f: impl Fn(Var) -> Var) {
        let states = self.temporal.iter_mut().chain(&mut self.spatial).flatten().flatten();
        for s in states {
            s.h = f(s.h);
            s.c = f(s.c);
        }
        self.reference.iter_mut().flatten().flatten().for_each(|v| *v = f(*v));
    }
}
