pub mod authz;
pub mod channel;
pub mod clock;
pub mod crypto;
pub mod directory;
pub mod fixtures;
pub mod model;
pub mod protocol;
pub mod registry;
pub mod scenario;
pub mod sim;
pub mod store;
pub mod token;
pub mod wire;
