//! Text assets shipped with the crate.

/// Reference module of the one-shot prompt example (elementwise addition).
pub const EXAMPLE_REFERENCE: &str = include_str!("../assets/example_reference.py");

/// Inline-CUDA answer paired with [`EXAMPLE_REFERENCE`]. Also the example
/// kernel the robust check compares candidates against.
pub const EXAMPLE_NEW_ARCH: &str = include_str!("../assets/example_new_arch.py");

pub const INFILL_TEMPLATE: &str = include_str!("../assets/infill_prompt.txt");

pub const GENERATE_TEMPLATE: &str = include_str!("../assets/generate_prompt.txt");
