#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/ladder-and-traces.md")]
pub mod ladder_and_traces {}
#[doc = include_str!("../../../book/src/ecas-scoring.md")]
pub mod ecas_scoring {}
#[doc = include_str!("../../../book/src/risk-areas.md")]
pub mod risk_areas {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/qoe.md")]
pub mod qoe {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/predictor.md")]
pub mod predictor {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
