pub mod contraction;
pub mod fingerprint;
pub mod init;
pub mod sink;
pub mod theory;
pub mod token_bias;
