pub mod channel;
pub mod environment;
pub mod error;
pub mod fsutil;
pub mod oracle;
pub mod policy;
pub mod risk;
pub mod trainer;

pub use error::{Error, Result};
