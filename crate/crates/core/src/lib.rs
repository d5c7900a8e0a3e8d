pub mod accessory;
pub mod cli;
pub mod coupon;
pub mod factory;
pub mod ids;
pub mod manager;
pub mod money;
pub mod server;
pub mod sim;
