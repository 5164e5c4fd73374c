//! SE(3) kinematics for egocentric actions.
//!
//! Every action maps to a relative pose in the camera frame it is executed
//! from: walking forward translates along +z, a left turn rotates positively
//! about +y. Composition is in the moving frame (each action applies relative
//! to where the previous one left the camera), so a trajectory's cumulative
//! pose is `compose(compose(p1, p2), p3)...` in action order.

use crate::domain::{Action, ActionKind, Pose, Trajectory, TrajectoryStep};
use crate::error::Result;

/// Relative pose of a single action in the frame it starts from.
pub fn action_to_pose(action: &Action) -> Pose {
    match action.kind {
        ActionKind::MoveForward => Pose {
            rotation: Pose::identity().rotation,
            translation: [0.0, 0.0, action.magnitude],
        },
        ActionKind::TurnLeft => rotation_about_y(action.magnitude.to_radians()),
        ActionKind::TurnRight => rotation_about_y(-action.magnitude.to_radians()),
    }
}

/// Rotation about +y by `theta` radians (positive = left turn), no translation.
fn rotation_about_y(theta: f64) -> Pose {
    let (s, c) = theta.sin_cos();
    Pose {
        rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        translation: [0.0, 0.0, 0.0],
    }
}

/// Applies `first`, then `then` in the frame `first` ends in:
/// R = R_first · R_then, t = R_first · t_then + t_first.
pub fn compose(first: &Pose, then: &Pose) -> Pose {
    let ra = &first.rotation;
    let rb = &then.rotation;
    let mut rotation = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut sum = 0.0;
            for k in 0..3 {
                sum += ra[i][k] * rb[k][j];
            }
            rotation[i][j] = sum;
        }
    }
    let mut translation = first.translation;
    for i in 0..3 {
        for k in 0..3 {
            translation[i] += ra[i][k] * then.translation[k];
        }
    }
    Pose { rotation, translation }
}

impl Pose {
    /// Inverse transform: R' = Rᵀ, t' = -Rᵀ t.
    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let mut inv_t = [0.0f64; 3];
        for i in 0..3 {
            for k in 0..3 {
                inv_t[i] -= rt[i][k] * t[k];
            }
        }
        Pose { rotation: rt, translation: inv_t }
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for i in 0..3 {
            for k in 0..3 {
                out[i] += r[i][k] * p[k];
            }
        }
        out
    }
}

/// Builds the trajectory for an action sequence: each step stores the
/// cumulative camera pose (relative to the start frame) after that action.
/// All actions are validated against the legal magnitude buckets.
pub fn trajectory_poses(actions: &[Action]) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(actions.len());
    let mut pose = Pose::identity();
    for action in actions {
        action.validate()?;
        pose = compose(&pose, &action_to_pose(action));
        steps.push(TrajectoryStep { action: *action, pose });
    }
    Ok(Trajectory { steps })
}
