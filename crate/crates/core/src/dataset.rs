//! Annotation parsing, scene windows, and leave-one-out splits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::tensor::Tensor;

/// Default observation length (3.2 s at 0.4 s per frame).
pub const OBS_LEN: usize = 8;
/// Default prediction horizon (4.8 s).
pub const PRED_LEN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub frame_id: i64,
    pub ped_id: i64,
    pub x: f64,
    pub y: f64,
}

fn parse_id(field: &str, line: usize, what: &str) -> Result<i64> {
    let parse_err = || Error::Parse {
        line,
        message: format!("{what} {field:?} is not an integer"),
    };
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    // the public text files write ids as "780.0"
    let v: f64 = field.parse().map_err(|_| parse_err())?;
    if v.is_finite() && v == libm::trunc(v) && libm::fabs(v) < 9.0e15 {
        Ok(v as i64)
    } else {
        Err(parse_err())
    }
}

/// Parses `frame ped x y` lines. Blank lines are skipped; the result is
/// sorted by `(frame_id, ped_id)`.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let coord = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    message: format!("{what} {s:?} is not a finite number"),
                }),
            }
        };
        records.push(AnnotationRecord {
            frame_id: parse_id(fields[0], line, "frame id")?,
            ped_id: parse_id(fields[1], line, "pedestrian id")?,
            x: coord(fields[2], "x")?,
            y: coord(fields[3], "y")?,
        });
    }
    records.sort_by_key(|r| (r.frame_id, r.ped_id));
    if let Some(w) = records
        .windows(2)
        .find(|w| (w[0].frame_id, w[0].ped_id) == (w[1].frame_id, w[1].ped_id))
    {
        return Err(Error::Data(format!(
            "duplicate record for frame {} pedestrian {}",
            w[0].frame_id, w[0].ped_id
        )));
    }
    Ok(records)
}

/// `M` pedestrians observed over `T` consecutive frames, stored as
/// `[M, T, 2]`. The first `obs_len` steps are the observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneWindow {
    positions: Tensor,
    ped_ids: Vec<i64>,
    start_frame: i64,
    obs_len: usize,
}

impl SceneWindow {
    pub fn new(positions: Tensor, ped_ids: Vec<i64>, start_frame: i64, obs_len: usize) -> Result<Self> {
        let shape = positions.shape();
        if shape.len() != 3 || shape[2] != 2 || shape[0] != ped_ids.len() {
            return Err(Error::Dimension {
                op: "scene window",
                left: shape.to_vec(),
                right: vec![ped_ids.len(), obs_len, 2],
            });
        }
        if shape[0] == 0 {
            return Err(Error::InvalidInput("scene window without pedestrians".into()));
        }
        if obs_len > shape[1] {
            return Err(Error::InvalidLength {
                op: "scene window",
                len: shape[1],
                required: obs_len,
            });
        }
        if !positions.is_finite() {
            return Err(Error::NonFinite("scene window positions".into()));
        }
        Ok(Self {
            positions,
            ped_ids,
            start_frame,
            obs_len,
        })
    }

    pub fn from_trajectories(
        trajectories: &[Vec<State>],
        ped_ids: Vec<i64>,
        start_frame: i64,
        obs_len: usize,
    ) -> Result<Self> {
        let len = trajectories.first().map_or(0, |t| t.len());
        let mut data = Vec::with_capacity(trajectories.len() * len * 2);
        for traj in trajectories {
            if traj.len() != len {
                return Err(Error::Dimension {
                    op: "scene window",
                    left: vec![len],
                    right: vec![traj.len()],
                });
            }
            for s in traj {
                data.push(s.x);
                data.push(s.y);
            }
        }
        let positions = Tensor::new(&[trajectories.len(), len, 2], data)?;
        Self::new(positions, ped_ids, start_frame, obs_len)
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn ped_ids(&self) -> &[i64] {
        &self.ped_ids
    }

    pub fn start_frame(&self) -> i64 {
        self.start_frame
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn num_peds(&self) -> usize {
        self.ped_ids.len()
    }

    /// Number of timesteps stored.
    pub fn len(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pred_len(&self) -> usize {
        self.len() - self.obs_len
    }

    fn check_ped(&self, m: usize) -> Result<()> {
        if m >= self.num_peds() {
            return Err(Error::Index {
                index: m,
                len: self.num_peds(),
            });
        }
        Ok(())
    }

    pub fn state(&self, m: usize, t: usize) -> State {
        let d = self.positions.data();
        let at = (m * self.len() + t) * 2;
        State::new(d[at], d[at + 1])
    }

    pub fn set_state(&mut self, m: usize, t: usize, s: State) {
        let len = self.len();
        let d = self.positions.data_mut();
        let at = (m * len + t) * 2;
        d[at] = s.x;
        d[at + 1] = s.y;
    }

    pub fn trajectory(&self, m: usize) -> Result<Vec<State>> {
        self.check_ped(m)?;
        Ok((0..self.len()).map(|t| self.state(m, t)).collect())
    }

    /// Trajectory of `m` as a channels-first `[2, T]` tensor.
    pub fn channels(&self, m: usize) -> Result<Tensor> {
        self.check_ped(m)?;
        let len = self.len();
        let mut data = vec![0.0; 2 * len];
        for t in 0..len {
            let s = self.state(m, t);
            data[t] = s.x;
            data[len + t] = s.y;
        }
        Tensor::new(&[2, len], data)
    }

    /// Steps `[from, to)` of every pedestrian; `obs_len` is clipped.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from > to || to > self.len() {
            return Err(Error::InvalidLength {
                op: "window slice",
                len: self.len(),
                required: to,
            });
        }
        let width = to - from;
        let mut data = Vec::with_capacity(self.num_peds() * width * 2);
        for m in 0..self.num_peds() {
            for t in from..to {
                let s = self.state(m, t);
                data.push(s.x);
                data.push(s.y);
            }
        }
        Ok(Self {
            positions: Tensor::new(&[self.num_peds(), width, 2], data)?,
            ped_ids: self.ped_ids.clone(),
            start_frame: self.start_frame,
            obs_len: self.obs_len.saturating_sub(from).min(width),
        })
    }

    /// The observed prefix only.
    pub fn observed(&self) -> Self {
        self.slice(0, self.obs_len).expect("obs_len within window")
    }

    pub fn map_states(&self, f: impl Fn(State) -> State) -> Self {
        let mut out = self.clone();
        for m in 0..self.num_peds() {
            for t in 0..self.len() {
                out.set_state(m, t, f(self.state(m, t)));
            }
        }
        out
    }

    /// Same scene with pedestrians reordered so that new index `i` holds old
    /// pedestrian `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut trajectories = Vec::with_capacity(order.len());
        let mut ids = Vec::with_capacity(order.len());
        for &m in order {
            trajectories.push(self.trajectory(m)?);
            ids.push(self.ped_ids[m]);
        }
        Self::from_trajectories(&trajectories, ids, self.start_frame, self.obs_len)
    }
}

/// Cuts a recording into windows of `total_len` consecutive frames.
///
/// A pedestrian joins a window only when annotated at every frame of it;
/// windows left without pedestrians are dropped.
pub fn build_windows(
    records: &[AnnotationRecord],
    obs_len: usize,
    total_len: usize,
    stride: usize,
) -> Result<Vec<SceneWindow>> {
    if stride == 0 || total_len == 0 || obs_len > total_len {
        return Err(Error::Config(format!(
            "bad window geometry: obs_len {obs_len}, total_len {total_len}, stride {stride}"
        )));
    }
    let mut by_frame: BTreeMap<i64, BTreeMap<i64, State>> = BTreeMap::new();
    for r in records {
        by_frame
            .entry(r.frame_id)
            .or_default()
            .insert(r.ped_id, State::new(r.x, r.y));
    }
    let frames: Vec<i64> = by_frame.keys().copied().collect();
    if let Some(step) = frames.get(1).map(|f| f - frames[0]) {
        if let Some(w) = frames.windows(2).find(|w| w[1] - w[0] != step) {
            return Err(Error::Data(format!(
                "frame spacing changes from {step} to {} at frame {}",
                w[1] - w[0],
                w[0]
            )));
        }
    }
    let per_frame: Vec<&BTreeMap<i64, State>> = by_frame.values().collect();

    let mut windows = Vec::new();
    if frames.len() < total_len {
        return Ok(windows);
    }
    for start in (0..=frames.len() - total_len).step_by(stride) {
        let span = &per_frame[start..start + total_len];
        let present: Vec<i64> = span[0]
            .keys()
            .copied()
            .filter(|id| span.iter().all(|f| f.contains_key(id)))
            .collect();
        if present.is_empty() {
            continue;
        }
        let trajectories: Vec<Vec<State>> = present
            .iter()
            .map(|id| span.iter().map(|f| f[id]).collect())
            .collect();
        windows.push(SceneWindow::from_trajectories(
            &trajectories,
            present,
            frames[start],
            obs_len,
        )?);
    }
    Ok(windows)
}

/// Annotations of one recording, e.g. `"hotel"`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedRecords {
    pub name: String,
    pub records: Vec<AnnotationRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub obs_len: usize,
    pub total_len: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            obs_len: OBS_LEN,
            total_len: OBS_LEN + PRED_LEN,
            stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SceneWindow>,
    pub val: Vec<SceneWindow>,
    pub test: Vec<SceneWindow>,
    pub test_set_name: String,
}

/// Holds out `test_name` entirely; the other sets' windows are shuffled with
/// `seed` and the first `round(val_fraction * n)` go to validation.
pub fn split_leave_one_out(
    sets: &[NamedRecords],
    test_name: &str,
    val_fraction: f64,
    seed: u64,
    spec: WindowSpec,
) -> Result<DatasetSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    if !sets.iter().any(|s| s.name == test_name) {
        let known: Vec<&str> = sets.iter().map(|s| s.name.as_str()).collect();
        return Err(Error::Config(format!(
            "unknown test set {test_name:?}; known sets: {}",
            known.join(", ")
        )));
    }
    let mut test = Vec::new();
    let mut rest = Vec::new();
    for set in sets {
        let windows = build_windows(&set.records, spec.obs_len, spec.total_len, spec.stride)?;
        if set.name == test_name {
            test.extend(windows);
        } else {
            rest.extend(windows);
        }
    }
    split_windows(rest, test, test_name, val_fraction, seed)
}

/// Seeded train/validation split of already-built windows.
pub fn split_windows(
    mut rest: Vec<SceneWindow>,
    test: Vec<SceneWindow>,
    test_name: &str,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let n_val = libm::round(val_fraction * rest.len() as f64) as usize;
    let train = rest.split_off(n_val);
    Ok(DatasetSplit {
        train,
        val: rest,
        test,
        test_set_name: test_name.to_string(),
    })
}
