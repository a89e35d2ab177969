//! Distributed side of the framework: the environment REST service, the
//! environment manager, asynchronous rollout workers, the policy service
//! and the GRPO training loop.

pub mod clock;
pub mod env_client;
pub mod env_service;
pub mod host;
pub mod manager;
pub mod protocol;
pub mod sim;
pub mod policy_client;
pub mod policy_service;
pub mod rollout;
pub mod train;
