pub mod bank;
pub mod config;
pub mod data;
pub mod hlw;
pub mod layers;
pub mod net;
pub mod optim;
pub mod schedule;
pub mod trainer;
