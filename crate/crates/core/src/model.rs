//! Model primitives for the career-decision family.
//!
//! A state is a point of a `p`-dimensional integer grid. Coordinate roles:
//!
//! | coord | role | values |
//! |-------|------|--------|
//! | 0 | age | stored `0..T`, age = coord + 1 |
//! | 1 | years of education | `0..T` |
//! | 2 | years of work experience (`p >= 4`) | `0..T` |
//! | 3 | years at home (`p == 5`) | `0..T` |
//! | p-1 | previous-period choice | stored `0..3`, choice = coord + 1 |
//!
//! Accumulators saturate at `T - 1`. A state is terminal when its age equals `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_DIMS: usize = 5;
pub const N_ACTIONS: usize = 3;
pub const THETA_DIM: usize = 4;

/// One of the three choices: school (1), work (2), home (3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(u8);

impl Action {
    pub const SCHOOL: Action = Action(1);
    pub const WORK: Action = Action(2);
    pub const HOME: Action = Action(3);
    pub const ALL: [Action; N_ACTIONS] = [Action::SCHOOL, Action::WORK, Action::HOME];

    pub fn new(a: u8) -> Result<Self> {
        if (1..=N_ACTIONS as u8).contains(&a) {
            Ok(Action(a))
        } else {
            Err(Error::InvalidAction(a))
        }
    }

    /// Choice number in `1..=3`.
    #[inline]
    pub fn number(self) -> u8 {
        self.0
    }

    /// Zero-based slot in `0..3`.
    #[inline]
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Self {
        Action(i as u8 + 1)
    }
}

/// Reward coefficients θ₁..θ₄.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaVector<F>(pub [F; THETA_DIM]);

impl<F: Scalar> ThetaVector<F> {
    pub fn new(values: [F; THETA_DIM]) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(ThetaVector(values))
        } else {
            Err(Error::InvalidModel(format!("non-finite theta {values:?}")))
        }
    }

    pub fn from_f64(values: [f64; THETA_DIM]) -> Result<Self> {
        Self::new(values.map(F::of))
    }

    pub fn to_f64(&self) -> [f64; THETA_DIM] {
        self.0.map(|v| v.to_f64_lossy())
    }

    #[inline]
    pub fn get(&self, j: usize) -> F {
        self.0[j]
    }
}

/// A grid point together with its packed mixed-radix index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct State {
    coords: [u32; MAX_DIMS],
    len: u8,
    index: usize,
}

impl State {
    #[inline]
    pub fn coords(&self) -> &[u32] {
        &self.coords[..self.len as usize]
    }

    #[inline]
    pub fn coord(&self, j: usize) -> u32 {
        self.coords[j]
    }

    /// Packed index in `0..|S|`.
    #[inline]
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Serializable model block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: u32,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Adds the kinked bonus `max(0, s3 - T/2) * theta3` to the work reward.
    #[serde(default)]
    pub kinked_reward: bool,
}

fn default_beta() -> f64 {
    0.95
}

/// State-space geometry, reward form, transition rule and discount factor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    p: usize,
    horizon: u32,
    dim_sizes: Vec<u32>,
    strides: Vec<usize>,
    beta: f64,
    kinked: bool,
}

/// Builds the career-decision model with `p` state variables and horizon `t_max`.
pub fn build_career_model(p: usize, t_max: u32, beta: f64) -> Result<ModelSpec> {
    ModelSpec::career(p, t_max, beta, false)
}

impl ModelSpec {
    pub fn career(p: usize, t_max: u32, beta: f64, kinked: bool) -> Result<Self> {
        if !(3..=5).contains(&p) {
            return Err(Error::InvalidModel(format!("p must be 3, 4 or 5, got {p}")));
        }
        if t_max < 2 {
            return Err(Error::InvalidModel(format!("T must be at least 2, got {t_max}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidModel(format!("beta must lie in [0, 1), got {beta}")));
        }
        let mut dim_sizes = vec![t_max; p - 1];
        dim_sizes.push(N_ACTIONS as u32);
        let mut strides = vec![1usize; p];
        for j in (0..p - 1).rev() {
            strides[j] = strides[j + 1] * dim_sizes[j + 1] as usize;
        }
        Ok(ModelSpec {
            p,
            horizon: t_max,
            dim_sizes,
            strides,
            beta,
            kinked,
        })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        Self::career(cfg.p, cfg.horizon, cfg.beta, cfg.kinked_reward)
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            p: self.p,
            horizon: self.horizon,
            beta: self.beta,
            kinked_reward: self.kinked,
        }
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    /// Terminal age `T`.
    #[inline]
    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    #[inline]
    pub fn dim_sizes(&self) -> &[u32] {
        &self.dim_sizes
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn is_kinked(&self) -> bool {
        self.kinked
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    #[inline]
    pub fn theta_dim(&self) -> usize {
        THETA_DIM
    }

    /// `|S|`, the product of the dimension sizes.
    pub fn n_states(&self) -> usize {
        self.dim_sizes.iter().map(|&q| q as usize).product()
    }

    /// Number of states sharing one age.
    pub fn slice_len(&self) -> usize {
        self.strides[0]
    }

    /// Reward coefficients that enter the reward for this `p`.
    ///
    /// With `p == 3` there is no experience coordinate, so θ₃ is absent.
    pub fn active_theta(&self) -> [bool; THETA_DIM] {
        [true, true, self.p >= 4, true]
    }

    #[inline]
    fn education_dim(&self) -> usize {
        1
    }

    #[inline]
    fn experience_dim(&self) -> Option<usize> {
        (self.p >= 4).then_some(2)
    }

    #[inline]
    fn home_dim(&self) -> Option<usize> {
        (self.p == 5).then_some(3)
    }

    #[inline]
    pub fn last_choice_dim(&self) -> usize {
        self.p - 1
    }

    pub fn state(&self, coords: &[u32]) -> Result<State> {
        if coords.len() != self.p {
            return Err(Error::StateOutOfRange(format!(
                "expected {} coordinates, got {}",
                self.p,
                coords.len()
            )));
        }
        for (j, (&c, &q)) in coords.iter().zip(&self.dim_sizes).enumerate() {
            if c >= q {
                return Err(Error::StateOutOfRange(format!(
                    "coordinate {j} = {c} not below {q}"
                )));
            }
        }
        let mut arr = [0u32; MAX_DIMS];
        arr[..self.p].copy_from_slice(coords);
        Ok(self.from_array(arr))
    }

    #[inline]
    fn from_array(&self, coords: [u32; MAX_DIMS]) -> State {
        let index = coords[..self.p]
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c as usize * s)
            .sum();
        State {
            coords,
            len: self.p as u8,
            index,
        }
    }

    /// Mixed-radix index of `coords`; age is the most significant digit.
    pub fn pack_state(&self, coords: &[u32]) -> Result<usize> {
        self.state(coords).map(|s| s.index)
    }

    pub fn unpack_state(&self, index: usize) -> Result<State> {
        if index >= self.n_states() {
            return Err(Error::StateOutOfRange(format!(
                "index {index} not below {}",
                self.n_states()
            )));
        }
        Ok(self.unpack_unchecked(index))
    }

    #[inline]
    pub(crate) fn unpack_unchecked(&self, index: usize) -> State {
        let mut coords = [0u32; MAX_DIMS];
        let mut rest = index;
        for j in 0..self.p {
            coords[j] = (rest / self.strides[j]) as u32;
            rest %= self.strides[j];
        }
        State {
            coords,
            len: self.p as u8,
            index,
        }
    }

    /// Age at a state, in `1..=T`.
    #[inline]
    pub fn age(&self, s: &State) -> u32 {
        s.coords[0] + 1
    }

    #[inline]
    pub fn education(&self, s: &State) -> u32 {
        s.coords[self.education_dim()]
    }

    #[inline]
    pub fn experience(&self, s: &State) -> u32 {
        self.experience_dim().map_or(0, |j| s.coords[j])
    }

    #[inline]
    pub fn last_choice(&self, s: &State) -> Action {
        Action::from_index(s.coords[self.last_choice_dim()] as usize)
    }

    #[inline]
    pub fn is_terminal(&self, s: &State) -> bool {
        self.age(s) == self.horizon
    }

    /// Age 1, no schooling or experience, previous choice "home".
    pub fn initial_state(&self) -> State {
        let mut coords = [0u32; MAX_DIMS];
        coords[self.last_choice_dim()] = Action::HOME.index() as u32;
        self.from_array(coords)
    }

    /// Flow reward ū(s, a; θ) without the taste shock.
    #[inline]
    pub fn reward<F: Scalar>(&self, s: &State, a: Action, theta: &ThetaVector<F>) -> F {
        let edu = F::of(self.education(s) as f64);
        match a.0 {
            1 => theta.0[0] * edu,
            2 => {
                let mut r = theta.0[1] * edu;
                if let Some(j) = self.experience_dim() {
                    let exp = s.coords[j] as f64;
                    r = r + theta.0[2] * F::of(exp);
                    if self.kinked {
                        let kink = (exp - self.horizon as f64 / 2.0).max(0.0);
                        r = r + theta.0[2] * F::of(kink);
                    }
                }
                r
            }
            _ => theta.0[3],
        }
    }

    /// Deterministic successor of a non-terminal state.
    pub fn transition(&self, s: &State, a: Action) -> Result<State> {
        if self.is_terminal(s) {
            return Err(Error::TerminalState(s.coords().to_vec()));
        }
        Ok(self.successor(s, a))
    }

    /// Successor without the terminal check; callers guarantee `s` is not terminal.
    #[inline]
    pub(crate) fn successor(&self, s: &State, a: Action) -> State {
        let cap = self.horizon - 1;
        let mut c = s.coords;
        c[0] += 1;
        let bump = |c: &mut [u32; MAX_DIMS], j: usize| c[j] = (c[j] + 1).min(cap);
        match a.0 {
            1 => bump(&mut c, self.education_dim()),
            2 => {
                if let Some(j) = self.experience_dim() {
                    bump(&mut c, j)
                }
            }
            _ => {
                if let Some(j) = self.home_dim() {
                    bump(&mut c, j)
                }
            }
        }
        c[self.last_choice_dim()] = a.index() as u32;
        self.from_array(c)
    }

    /// Iterator over all states in packed order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.n_states()).map(move |i| self.unpack_unchecked(i))
    }

    /// Packed index range of the states with the given age (1-based).
    pub fn age_slice(&self, age: u32) -> std::ops::Range<usize> {
        let start = (age as usize - 1) * self.slice_len();
        start..start + self.slice_len()
    }
}
