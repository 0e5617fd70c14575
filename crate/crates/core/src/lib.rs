pub mod accounting;
pub mod authn;
pub mod cli;
pub mod clock;
pub mod gateway;
pub mod config;
pub mod ledger;
pub mod mock;
pub mod plugin;
pub mod reporter;
pub mod server;
pub mod stack;
pub mod store;
