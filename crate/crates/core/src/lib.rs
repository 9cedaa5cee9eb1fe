pub mod bench;
pub mod elgamal;
pub mod fabric;
pub mod group;
pub mod host;
pub mod identity;
pub mod ids;
pub mod leakage;
pub mod multisig;
pub mod node;
pub mod reliability;
pub mod scenario;
pub mod threshold;
pub mod wire;
