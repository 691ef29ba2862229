//! Library surface of the CLI: file formats, the remote backend, the
//! stub server, and generation plumbing, shared between the binary and
//! the integration tests.

pub mod config_file;
pub mod corpus;
pub mod dataset;
pub mod density;
pub mod remote;
pub mod stub;
