#![no_std]
extern crate alloc;

pub mod autodiff;
pub mod control;
pub mod dynamics;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod math;
pub mod policy;
pub mod real;
pub mod scene;
pub mod toa;
pub mod training;
