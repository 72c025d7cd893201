// SPDX-License-Identifier: Apache-2.0

pub mod clock;
pub mod codec;
pub mod crypto;
pub mod measurement;
pub mod oca;
pub mod tee;
pub mod tpm;
pub mod protocol;
pub mod verifier;
pub mod harness;
