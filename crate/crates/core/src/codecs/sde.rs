use serde::{Deserialize, Serialize};

use super::{CodecError, RawStateTrajectory};
use crate::model::{HiddenState, HiddenStateTrajectory};

/// Token-wise state deltas at one layer: `deltas[i] = states[i+1] - states[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTrajectory {
    layer: usize,
    deltas: Vec<HiddenState>,
}

impl DeltaTrajectory {
    /// Wraps deltas whose source trajectory is not available (e.g. decoded
    /// off the wire). Widths must be uniform.
    pub fn from_deltas(layer: usize, deltas: Vec<HiddenState>) -> Result<Self, CodecError> {
        if let Some(first) = deltas.first() {
            let w = first.len();
            if let Some(bad) = deltas.iter().find(|d| d.len() != w) {
                return Err(CodecError::WidthMismatch {
                    expected: w,
                    found: bad.len(),
                });
            }
        }
        Ok(Self { layer, deltas })
    }

    pub fn zeros(layer: usize, n_tokens: usize, width: usize) -> Self {
        Self {
            layer,
            deltas: vec![HiddenState::zeros(width); n_tokens],
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn deltas(&self) -> &[HiddenState] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            layer: self.layer,
            deltas: self.deltas.iter().map(|d| d.map(|x| x * factor)).collect(),
        }
    }
}

fn check_trajectory(traj: &HiddenStateTrajectory) -> Result<usize, CodecError> {
    let first = traj.states.first().ok_or(CodecError::EmptyTrajectory)?;
    let w = first.len();
    for s in &traj.states {
        if s.len() != w {
            return Err(CodecError::WidthMismatch {
                expected: w,
                found: s.len(),
            });
        }
        if !s.is_finite() {
            return Err(CodecError::NonFinite("hidden state"));
        }
    }
    Ok(w)
}

/// Successive differences of a trajectory `h_0..h_n`, giving `s_1..s_n`.
pub fn encode_sde(traj: &HiddenStateTrajectory) -> Result<DeltaTrajectory, CodecError> {
    check_trajectory(traj)?;
    let deltas = traj
        .states
        .windows(2)
        .map(|w| HiddenState::new(w[1].iter().zip(w[0].iter()).map(|(&b, &a)| b - a).collect()))
        .collect();
    Ok(DeltaTrajectory {
        layer: traj.layer,
        deltas,
    })
}

/// The raw-state ablation payload: `h_1..h_n`, one state per token.
pub fn encode_raw(traj: &HiddenStateTrajectory) -> Result<RawStateTrajectory, CodecError> {
    check_trajectory(traj)?;
    Ok(RawStateTrajectory {
        layer: traj.layer,
        states: traj.states[1..].to_vec(),
    })
}

/// Rebuilds `h_0..h_n` from `h_0` and the deltas by running sums.
pub fn reconstruct_states(initial: &HiddenState, deltas: &DeltaTrajectory) -> Vec<HiddenState> {
    let mut acc = initial.as_slice().to_vec();
    let mut out = vec![initial.clone()];
    for d in deltas.deltas() {
        acc.iter_mut().zip(d.iter()).for_each(|(a, &x)| *a += x);
        out.push(HiddenState::new(acc.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: &[&[f32]]) -> HiddenStateTrajectory {
        HiddenStateTrajectory {
            layer: 2,
            states: states
                .iter()
                .map(|s| HiddenState::new(s.to_vec()))
                .collect(),
        }
    }

    #[test]
    fn worked_example() {
        let d = encode_sde(&traj(&[&[1.0, 2.0], &[3.0, 5.0], &[4.0, 4.0]])).unwrap();
        let got: Vec<Vec<f32>> = d.deltas().iter().map(|s| s.to_vec()).collect();
        assert_eq!(got, vec![vec![2.0, 3.0], vec![1.0, -1.0]]);
        assert_eq!(d.layer(), 2);
    }

    #[test]
    fn constant_trajectory_gives_zero_deltas() {
        let d = encode_sde(&traj(&[&[0.5, -1.0], &[0.5, -1.0], &[0.5, -1.0]])).unwrap();
        assert!(d.deltas().iter().all(|s| s.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn single_state_gives_no_deltas() {
        let d = encode_sde(&traj(&[&[1.0]])).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn empty_and_ragged_are_errors() {
        assert_eq!(
            encode_sde(&traj(&[])).unwrap_err(),
            CodecError::EmptyTrajectory
        );
        assert!(matches!(
            encode_sde(&traj(&[&[1.0], &[1.0, 2.0]])),
            Err(CodecError::WidthMismatch { .. })
        ));
        assert!(matches!(
            encode_sde(&traj(&[&[f32::NAN]])),
            Err(CodecError::NonFinite(_))
        ));
    }

    #[test]
    fn raw_payload_drops_initial_state() {
        let r = encode_raw(&traj(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert_eq!(r.states.len(), 2);
        assert_eq!(r.states[0].as_slice(), &[2.0]);
    }
}
