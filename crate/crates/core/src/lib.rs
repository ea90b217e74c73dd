pub mod bench;
pub mod cli;
pub mod dal;
pub mod dnp;
pub mod engine;
pub mod faultinject;
pub mod lofamo;
pub mod sim;
pub mod specfmt;
pub mod topology;
