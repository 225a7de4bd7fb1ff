//! Learned one-step dynamics and reward model.
//!
//! Input layout (20): `[obs_{t-1} (6), obs_t (6), dist_{t-1} (3), dist_t (3), action_t (2)]`.
//! Output layout (7): `[obs_{t+1} (6), reward (1)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, NetSpec};

pub const WM_INPUT_DIM: usize = 20;
pub const WM_OUTPUT_DIM: usize = 7;

/// The two most recent observations; the world model needs both.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsHistory {
    pub prev: Observation,
    pub curr: Observation,
}

impl ObsHistory {
    /// At episode start the previous observation is the current one.
    pub fn start(obs: Observation) -> Self {
        Self {
            prev: obs,
            curr: obs,
        }
    }

    pub fn push(&mut self, obs: Observation) {
        self.prev = self.curr;
        self.curr = obs;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldModelInput(pub [f64; WM_INPUT_DIM]);

impl WorldModelInput {
    pub fn obs_prev(&self) -> Observation {
        Observation(self.0[0..6].try_into().unwrap())
    }

    pub fn obs_curr(&self) -> Observation {
        Observation(self.0[6..12].try_into().unwrap())
    }

    pub fn dist_prev(&self) -> [f64; 3] {
        self.0[12..15].try_into().unwrap()
    }

    pub fn dist_curr(&self) -> [f64; 3] {
        self.0[15..18].try_into().unwrap()
    }

    pub fn action(&self) -> Action {
        Action::from_slice(&self.0[18..20])
    }
}

pub fn wm_features(obs_prev: &Observation, obs_curr: &Observation, action: Action) -> WorldModelInput {
    let mut x = [0.0; WM_INPUT_DIM];
    x[0..6].copy_from_slice(&obs_prev.0);
    x[6..12].copy_from_slice(&obs_curr.0);
    x[12..15].copy_from_slice(&obs_prev.distances());
    x[15..18].copy_from_slice(&obs_curr.distances());
    x[18..20].copy_from_slice(&action.0);
    WorldModelInput(x)
}

/// Anything that can simulate one step for the planner.
pub trait Dynamics {
    fn predict(&self, obs_prev: &Observation, obs_curr: &Observation, action: Action)
        -> Result<(Observation, f64)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModelNet {
    pub net: DenseNet,
}

impl WorldModelNet {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let spec = NetSpec::new(WM_INPUT_DIM, hidden.to_vec(), WM_OUTPUT_DIM)?;
        Ok(Self {
            net: DenseNet::orthogonal(spec, std::f64::consts::SQRT_2, &[1.0; WM_OUTPUT_DIM], rng),
        })
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        crate::error::check_len("world model input", WM_INPUT_DIM, net.spec().input_dim)?;
        crate::error::check_len("world model output", WM_OUTPUT_DIM, net.spec().output_dim)?;
        Ok(Self { net })
    }
}

/// One simulated step. The action is clipped to unit norm as the
/// environment would execute it; predicted coordinates are clamped to the box.
pub fn wm_predict(
    wm: &WorldModelNet,
    obs_prev: &Observation,
    obs_curr: &Observation,
    action: Action,
) -> Result<(Observation, f64)> {
    let x = wm_features(obs_prev, obs_curr, action.clipped());
    let out = wm.net.forward(&x.0)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Simulation);
    }
    let obs = Observation(out[0..6].try_into().unwrap()).clamped();
    Ok((obs, out[6]))
}

impl Dynamics for WorldModelNet {
    fn predict(&self, obs_prev: &Observation, obs_curr: &Observation, action: Action)
        -> Result<(Observation, f64)> {
        wm_predict(self, obs_prev, obs_curr, action)
    }
}
