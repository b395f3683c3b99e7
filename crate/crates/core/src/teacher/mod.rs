//! Expert policies: a DQN-trained Q-network or a scripted CartPole
//! controller, and the expert dataset built from their clean rollouts.

mod dataset;
mod dqn;
mod qnet;
mod replay;

pub use dataset::{build_dataset, dataset_episode_seed, ExpertDataset, DATASET_MAGIC, DATASET_VERSION};
pub use dqn::{
    default_target_return, scripted_cartpole, train_teacher, train_teacher_with, Teacher, TeacherConfig,
    TeacherLogRow, TeacherSource,
};
pub use qnet::QNetwork;
pub use replay::{Experience, ReplayBuffer};

#[cfg(test)]
mod tests;
