pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linear;
pub(crate) mod reduce;
pub(crate) mod sample;
pub(crate) mod shape_ops;
pub(crate) mod shuffle;
pub(crate) mod softmax;
