//! Bit-accurate model of a mixed-precision GEMM accelerator built from
//! shift&add processing elements.
//!
//! The crate covers binary16 arithmetic, group quantization, the PE
//! datapaths, the dequantize-after GEMM kernel, an output-stationary
//! systolic-array cycle and energy model, and a design-space sweep with
//! Pareto extraction.
//!
//! ```
//! use mpx_core::mpgemm::{gemm_dequant_after, quantize_activations_int8, Activations, GemmProblem};
//! use mpx_core::pe::PeKind;
//! use mpx_core::quant::{quantize, QuantScheme};
//! use mpx_core::tensor::Tensor;
//!
//! let w = Tensor::from_fn(4, 8, |r, c| (r as f64 - c as f64) / 8.0);
//! let x = Tensor::from_fn(2, 8, |r, c| (r + c) as f64 / 4.0);
//! let wq = quantize(&w, &QuantScheme::uint4_grouped(4)).unwrap();
//! let xq = quantize_activations_int8(&x).unwrap();
//! let problem = GemmProblem::new(2, 4, 8, 4).unwrap();
//! let (y, counters) = gemm_dequant_after(Activations::Int8(&xq), &wq, &problem, PeKind::MixPeA8).unwrap();
//! assert_eq!(y.shape(), (2, 4));
//! assert_eq!(counters.group_dequants, 2 * 4 * 2);
//! ```

pub mod arch;
pub mod dse;
pub mod error;
pub mod mpgemm;
pub mod numerics;
pub mod pe;
pub mod quant;
pub mod tensor;
pub mod workloads;

pub use error::{Error, Result};
pub use numerics::Half;
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/binary16.md")]
    mod binary16 {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/pe.md")]
    mod pe {}
    #[doc = include_str!("../../../book/src/gemm.md")]
    mod gemm {}
    #[doc = include_str!("../../../book/src/systolic.md")]
    mod systolic {}
    #[doc = include_str!("../../../book/src/dse.md")]
    mod dse {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
