//! Skeletons, rotation algebra, forward kinematics, foot contacts and the
//! flat per-frame motion representation.

mod kinematics;
pub mod procedural;
mod representation;
mod rotation;
mod skeleton;

pub use kinematics::{detect_foot_contacts, forward_kinematics, DEFAULT_CONTACT_THRESHOLD};
pub use representation::{
    build_representation, joint_pair_distances, representation_width, split_representation,
    ChannelLayout, InteractionSample, MotionSequence, Provenance, SplitRepresentation, DEFAULT_FPS,
};
pub use rotation::{axis_angle_to_matrix, matrix_to_rot6d, rot6d_to_matrix, Rot6d, IDENTITY_6D};
pub use skeleton::Skeleton;
