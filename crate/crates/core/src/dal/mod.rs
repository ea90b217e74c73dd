//! Distributed application layer: Kahn process networks, scenario FSM,
//! mapping, and redundant deployment.

pub mod behavior;
pub mod mapping;
pub mod spec;

pub use behavior::{instantiate, item_u64, u64_item, Behavior, Demand, Firing, Item};
pub use mapping::{expand_critical, map_network, map_redundant, remap, Expanded, MapContext, MapError, Mapping};
pub use spec::{
    parse_app_spec, AppSpec, BehaviorSpec, ChannelSpec, FsmEvent, ProcessNetwork, ProcessSpec, ScenarioFsm, Trigger,
    DEFAULT_CAPACITY,
};
