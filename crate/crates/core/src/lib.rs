// SPDX-License-Identifier: Apache-2.0

//! Syscall and syscall-argument allowlists for binaries linked against a
//! C library, computed from the library's IR and the binary's disassembly.

pub mod binscan;
pub mod callgraph;
pub mod domain;
mod error;
pub mod ir;
pub mod pipeline;
pub mod policy;
pub mod profile;
pub mod symexec;
pub mod sysident;
pub mod taint;
pub mod valueset;

pub use error::{Error, Result};
