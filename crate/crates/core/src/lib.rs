//! Simulation core: a MIMO-OFDM satellite downlink, its multipath channel,
//! a barrage / pilot-tone jammer, the time-frequency featurizer and the
//! dataset pipeline that ties them together.

pub mod attacker;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod featurizer;
pub mod ofdm;
pub mod power;
pub mod seed;

pub use attacker::{AttackInterval, AttackPlan, AttackScenario, JamType};
pub use channel::{ChannelParams, ChannelRealization, NoiseParams};
pub use dataset::{
    generate_dataset, load_samples, plan_records, split, DatasetManifest, DatasetPaths, DatasetReader, Group,
    SampleRecord, ScenarioConfig, SignalChain, Split, SplitPolicy,
};
pub use error::{Error, Result};
pub use featurizer::{FeatureParams, Label, SampleMeta, SampleTensor};
pub use ofdm::{FrameGrid, LinkParams, SubcarrierMap};
