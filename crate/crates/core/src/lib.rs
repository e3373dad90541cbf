//! Listwise learning to rank for deadline-bound items.
//!
//! A target-attention scorer ranks the matches open to a user, trained with a
//! differentiable nDCG. A simulator with known per-user urgency sensitivity
//! supplies data whose ground truth can be checked. Everything is built on
//! the small reverse-mode engine in [`autodiff`].
//!
//! The guide in `book/` walks through each part; its examples run as doctests.

pub mod autodiff;
pub mod error;
pub mod features;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod booktest {
    macro_rules! booktest {
        ($i:ident) => {
            #[doc = include_str!(concat!("../../../book/src/", stringify!($i), ".md"))]
            mod $i {}
        };
    }
    booktest!(introduction);
    booktest!(autodiff);
    booktest!(features);
    booktest!(model);
    booktest!(ranking_loss);
    booktest!(metrics);
    booktest!(simulator);
    booktest!(training);
    booktest!(cli);
}
